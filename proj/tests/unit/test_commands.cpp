// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ccmlab/commands.hpp"
#include "ccmlab/config.hpp"
#include "ccmlab/errors.hpp"

using namespace ccm;
namespace fs = std::filesystem;

namespace {

RunConfig tiny(const std::string& name) {
    RunConfig c;
    c.sizes.grid_points_per_side = 61;
    c.sizes.lcnet_train_locations = 2;
    c.sizes.lcnet_train_speeds = 1;
    c.sizes.lcnet_test_locations = 2;
    c.sizes.lcnet_test_speeds = 1;
    c.sizes.lenet_train_samples = 20;
    c.sizes.error_samples = 10;
    c.sizes.error_draws = 2;
    c.lcnet_training = {1e-3, 8, 3, 5};
    c.lenet_training = {1e-3, 8, 3, 5};
    c.train_fractions = {0.5, 1.0};
    c.n_trajectories = 1;
    c.n_coct = 2;
    c.snr_db = {0.0};
    c.seed = 11;
    const fs::path dir = fs::temp_directory_path() / ("ccm_commands_test_" + name);
    fs::remove_all(dir);
    c.output_dir = dir.string();
    return c;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> lines_of(const std::string& path) {
    std::ifstream in(path);
    std::vector<std::string> v;
    for (std::string l; std::getline(in, l);) {
        v.push_back(l);
    }
    return v;
}

} // namespace

TEST_CASE("dataset generation") {
    std::ostringstream log;
    const RunConfig a = tiny("gen_a");
    cmd_gen_dataset(a, log);
    const OutputLayout out{a.output_dir};
    for (const auto& f : {out.lcnet_train(), out.lcnet_test(), out.lenet_train(), out.lenet_validation(), out.grid(),
                          out.config_echo()}) {
        CHECK(fs::exists(f));
    }
    const LcnetDataset train = load_lcnet_dataset(out.lcnet_train());
    CHECK(train.size() == 2);
    CHECK(train.n_antennas == 12);
    CHECK(train.labels.rows() == 144);
    CHECK(load_lenet_dataset(out.lenet_train()).size() == 20);
    CHECK(load_lenet_dataset(out.lenet_validation()).noise_var == 0.0);
    for (Eigen::Index i = 0; i < train.size(); ++i) {
        const CovMatrix r = train.label(i);
        CHECK((r - r.adjoint()).norm() == 0.0);
    }
    const RunConfig echoed = load_run_config(out.config_echo());
    CHECK(echoed.seed == a.seed);
    CHECK(echoed.sizes.grid_points_per_side == 61);
    CHECK(echoed.output_dir == a.output_dir);

    // the stored coefficient undoes the label scaling and matches the oracle CCMs
    const ChannelGrid grid = grid_for(a, out.grid());
    std::vector<CovMatrix> raw;
    double scaled_trace = 0.0;
    for (Eigen::Index i = 0; i < train.size(); ++i) {
        const Eigen::Vector3d in = train.inputs.col(i);
        const CovMatrix oracle = grid.discrete_ccm(RegionSpec{in.head<2>(), in(2), a.timing});
        CHECK((train.label(i) - oracle).norm() < 1e-12 * oracle.norm());
        raw.push_back(oracle);
        scaled_trace += unpack_cov(train.labels.col(i)).trace().real();
    }
    CHECK(train.coefficient == doctest::Approx(trace_coefficient(raw)).epsilon(1e-12));
    CHECK(scaled_trace / static_cast<double>(train.size()) == doctest::Approx(12.0).epsilon(1e-12));

    RunConfig b = tiny("gen_b");
    cmd_gen_dataset(b, log);
    const OutputLayout out_b{b.output_dir};
    CHECK(slurp(out.lcnet_train()) == slurp(out_b.lcnet_train()));
    CHECK(slurp(out.lenet_train()) == slurp(out_b.lenet_train()));

    b.seed = 12;
    cmd_gen_dataset(b, log);
    CHECK(slurp(out.lcnet_train()) != slurp(out_b.lcnet_train()));

    fs::remove_all(a.output_dir);
    fs::remove_all(b.output_dir);
}

TEST_CASE("training, resume, eval and run") {
    std::ostringstream log;
    RunConfig full = tiny("train_full");
    cmd_gen_dataset(full, log);
    const OutputLayout out{full.output_dir};

    CHECK_THROWS_AS(load_models(full), ConfigError);

    cmd_train(full, Network::lcnet, false, log);
    cmd_train(full, Network::lenet, false, log);
    const auto loss = lines_of(out.loss_csv(Network::lcnet));
    REQUIRE(loss.size() == 4);
    CHECK(loss[0] == "epoch,loss");
    CHECK(lines_of(out.loss_csv(Network::lenet)).size() == 4);
    CHECK(fs::exists(out.error_stats()));

    // interrupted after one epoch, then resumed to the configured total
    RunConfig part = tiny("train_part");
    cmd_gen_dataset(part, log);
    const OutputLayout out_p{part.output_dir};
    part.lcnet_training.epochs = 1;
    cmd_train(part, Network::lcnet, false, log);
    CHECK(lines_of(out_p.loss_csv(Network::lcnet)).size() == 2);
    part.lcnet_training.epochs = 3;
    cmd_train(part, Network::lcnet, true, log);
    CHECK(slurp(out_p.checkpoint(Network::lcnet)) == slurp(out.checkpoint(Network::lcnet)));
    CHECK(slurp(out_p.loss_csv(Network::lcnet)) == slurp(out.loss_csv(Network::lcnet)));

    cmd_eval(full, log);
    const auto metrics = lines_of(out.metrics());
    REQUIRE(metrics.size() == 1 + 2 * full.train_fractions.size() + 1);
    CHECK(metrics[0] == kMetricsHeader);
    CHECK(metrics.back().rfind("centroid,", 0) == 0);

    const LcnetDataset test = load_lcnet_dataset(out.lcnet_test());
    CHECK(lcnet_test_nmse(test, [&](Eigen::Index i) { return test.label(i); }) == 0.0);

    const ExperimentReport rep = cmd_run(full, false, log);
    CHECK(rep.rows.size() == all_methods().size());
    CHECK(lines_of(out.report()).front() == kReportHeader);

    CHECK_THROWS_AS(parse_network("both"), ConfigError);

    fs::remove_all(full.output_dir);
    fs::remove_all(part.output_dir);
}

TEST_CASE("run can produce its own prerequisites") {
    std::ostringstream log;
    const RunConfig c = tiny("run_missing");
    CHECK_THROWS_AS(cmd_run(c, false, log), ConfigError);
    const ExperimentReport rep = cmd_run(c, true, log);
    CHECK(rep.rows.size() == all_methods().size());
    CHECK(fs::exists(OutputLayout{c.output_dir}.checkpoint(Network::lenet)));
    fs::remove_all(c.output_dir);
}
