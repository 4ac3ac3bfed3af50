// SPDX-License-Identifier: Apache-2.0
// ccmlab: dataset generation, training, evaluation and experiment sweeps.
//
// Settings come from the built-in defaults, then --config, then flags.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ccmlab/commands.hpp"
#include "ccmlab/errors.hpp"

namespace {

struct GlobalFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> mode;
};

ccm::RunConfig resolve(const GlobalFlags& g) {
    ccm::RunConfig cfg = g.config_path.empty() ? ccm::RunConfig{} : ccm::load_run_config(g.config_path);
    if (g.seed) {
        cfg.seed = *g.seed;
    }
    if (g.out) {
        cfg.output_dir = *g.out;
    }
    if (g.mode) {
        cfg.mode = ccm::parse_trajectory_mode(*g.mode);
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ccmlab - location-based channel covariance estimation lab"};
    app.require_subcommand(1);
    GlobalFlags g;
    app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "master seed (default 20240601)");
    app.add_option("--out", g.out, "output directory");
    app.add_option("--mode", g.mode, "trajectory mode")->check(CLI::IsMember({"constant", "dynamic"}));

    auto* gen = app.add_subcommand("gen-dataset", "write LCNET/LENET datasets and the channel grid cache");
    std::string which;
    bool resume = false;
    auto* train = app.add_subcommand("train", "train one network and write its checkpoint and loss CSV");
    train->add_option("--which", which, "network to train")->required()->check(CLI::IsMember({"lcnet", "lenet"}));
    train->add_flag("--resume", resume, "continue from the checkpoint's optimizer state");
    auto* eval = app.add_subcommand("eval", "NMSE_R / RMSE_L over the training-fraction sweep");
    bool train_missing = false;
    auto* run = app.add_subcommand("run", "channel-estimation experiment; writes report.csv");
    run->add_flag("--train-missing", train_missing, "generate datasets and train models that are missing");
    auto* echo = app.add_subcommand("config", "print the resolved configuration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const ccm::RunConfig cfg = resolve(g);
        if (*gen) {
            ccm::cmd_gen_dataset(cfg, std::clog);
        } else if (*train) {
            ccm::cmd_train(cfg, ccm::parse_network(which), resume, std::clog);
        } else if (*eval) {
            ccm::cmd_eval(cfg, std::clog);
        } else if (*run) {
            ccm::cmd_run(cfg, train_missing, std::clog);
        } else if (*echo) {
            cfg.validate();
            std::cout << nlohmann::json(cfg).dump(2) << '\n';
        }
    } catch (const ccm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
