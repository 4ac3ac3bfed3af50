// SPDX-License-Identifier: Apache-2.0
#include "ccmlab/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "ccmlab/errors.hpp"
#include "ccmlab/estimator.hpp"
#include "ccmlab/random.hpp"
#include "ccmlab/textio.hpp"

namespace ccm {

namespace fs = std::filesystem;

Network parse_network(const std::string& s) {
    if (s == "lcnet") {
        return Network::lcnet;
    }
    if (s == "lenet") {
        return Network::lenet;
    }
    throw ConfigError("--which must be lcnet or lenet, got '" + s + "'");
}

std::string OutputLayout::file(const std::string& name) const { return (fs::path(dir) / name).string(); }

namespace {

const char* name_of(Network n) { return n == Network::lcnet ? "lcnet" : "lenet"; }

OutputLayout prepare(const RunConfig& cfg) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) {
        throw std::runtime_error("cannot create output directory " + cfg.output_dir + ": " + ec.message());
    }
    OutputLayout out{cfg.output_dir};
    save_run_config(cfg, out.config_echo());
    return out;
}

std::uint64_t stream_seed(const RunConfig& cfg, const std::string& name, std::uint64_t index = 0) {
    return Rng::substream(cfg.seed, name, index).next_u64();
}

std::vector<std::pair<Channel, Position>> pairs_of(const LenetDataset& d) {
    std::vector<std::pair<Channel, Position>> v;
    v.reserve(static_cast<std::size_t>(d.size()));
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        v.emplace_back(d.channels.col(i), d.positions.col(i));
    }
    return v;
}

Eigen::Index fraction_count(Eigen::Index n, double fraction) {
    return std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(fraction * static_cast<double>(n))));
}

void write_loss_csv(const std::vector<double>& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    out << "epoch,loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
        out << i + 1 << ',' << format_double(trace[i]) << '\n';
    }
}

void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("missing " + path + " (run gen-dataset and train first)");
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed " + path + ": " + e.what());
    }
}

std::string meta_path(const OutputLayout& out, Network n) { return out.file(std::string(name_of(n)) + ".json"); }

ErrorStats lenet_error_stats(const RunConfig& cfg, const nn::MlpModel& lenet, const LenetDataset& train,
                             const LenetDataset& validation) {
    const auto samples = pairs_of(validation);
    return estimate_error_stats(lenet_localizer(lenet, train.zeta), samples, train.noise_var,
                                cfg.sizes.error_draws, stream_seed(cfg, "error-stats"));
}

} // namespace

ChannelGrid grid_for(const RunConfig& cfg, const std::string& cache_path) {
    const Scene scene = cfg.scene();
    const int n = cfg.sizes.grid_points_per_side;
    if (!cache_path.empty()) {
        if (auto g = ChannelGrid::load(cache_path, cfg.array, scene, n)) {
            return std::move(*g);
        }
    }
    ChannelGrid g(cfg.array, scene, n);
    if (!cache_path.empty()) {
        g.save(cache_path);
    }
    return g;
}

void cmd_gen_dataset(const RunConfig& cfg, std::ostream& log) {
    const OutputLayout out = prepare(cfg);
    const Scene scene = cfg.scene();
    ChannelGrid grid(cfg.array, scene, cfg.sizes.grid_points_per_side);
    grid.save(out.grid());
    log << "grid: " << grid.size() << " points\n";

    const DatasetSizes& s = cfg.sizes;
    Rng train_rng = Rng::substream(cfg.seed, "lcnet-train");
    const LcnetDataset train = make_lcnet_dataset(grid, scene.plane_bounds, cfg.timing, cfg.speeds,
                                                  s.lcnet_train_locations, s.lcnet_train_speeds, train_rng);
    save_lcnet_dataset(train, out.lcnet_train());
    Rng test_rng = Rng::substream(cfg.seed, "lcnet-test");
    const LcnetDataset test = make_lcnet_dataset(grid, scene.plane_bounds, cfg.timing, cfg.speeds,
                                                 s.lcnet_test_locations, s.lcnet_test_speeds, test_rng);
    save_lcnet_dataset(test, out.lcnet_test());
    log << "lcnet: " << train.size() << " train, " << test.size() << " test samples\n";

    Rng lenet_rng = Rng::substream(cfg.seed, "lenet-train");
    const LenetDataset lenet = make_lenet_dataset(cfg.array, scene, s.lenet_train_samples, cfg.lenet_noise_ratio,
                                                  lenet_rng);
    save_lenet_dataset(lenet, out.lenet_train());
    Rng val_rng = Rng::substream(cfg.seed, "lenet-validation");
    LenetDataset validation = make_lenet_dataset(cfg.array, scene, s.error_samples, 0.0, val_rng);
    validation.zeta = lenet.zeta;
    validation.noise_var = 0.0;
    save_lenet_dataset(validation, out.lenet_validation());
    log << "lenet: " << lenet.size() << " train, " << validation.size() << " validation samples\n";
}

nn::MlpModel train_lcnet(const RunConfig& cfg, const LcnetDataset& data, nn::TrainState& state) {
    nn::MlpModel model = nn::build(nn::lcnet_architecture(cfg.array.antennas()), stream_seed(cfg, "init-lcnet"));
    nn::fit_normalization(model, data.as_training());
    nn::train(model, data.as_training(), cfg.lcnet_training.to_train_config(stream_seed(cfg, "batches-lcnet")),
              state);
    return model;
}

nn::MlpModel train_lenet(const RunConfig& cfg, const LenetDataset& data, nn::TrainState& state) {
    nn::MlpModel model = nn::build(nn::lenet_architecture(cfg.array.antennas()), stream_seed(cfg, "init-lenet"));
    const nn::Dataset d = data.as_training();
    nn::fit_normalization(model, d);
    nn::train(model, d, cfg.lenet_training.to_train_config(stream_seed(cfg, "batches-lenet")), state);
    return model;
}

void cmd_train(const RunConfig& cfg, Network which, bool resume, std::ostream& log) {
    const OutputLayout out = prepare(cfg);
    const std::string ckpt = out.checkpoint(which);
    std::optional<nn::Checkpoint> previous;
    if (resume && fs::exists(ckpt)) {
        previous = nn::load_checkpoint(ckpt);
        if (!previous->state) {
            throw ConfigError(ckpt + " has no optimizer state to resume from");
        }
    }

    nn::TrainState state;
    nn::MlpModel model;
    if (which == Network::lcnet) {
        const LcnetDataset data = load_lcnet_dataset(out.lcnet_train());
        const nn::TrainConfig tc = cfg.lcnet_training.to_train_config(stream_seed(cfg, "batches-lcnet"));
        if (previous) {
            model = std::move(previous->model);
            state = std::move(*previous->state);
            nn::train(model, data.as_training(), tc, state);
        } else {
            model = train_lcnet(cfg, data, state);
        }
        write_json({{"coefficient", data.coefficient}, {"n_antennas", data.n_antennas}}, meta_path(out, which));
    } else {
        const LenetDataset data = load_lenet_dataset(out.lenet_train());
        const nn::TrainConfig tc = cfg.lenet_training.to_train_config(stream_seed(cfg, "batches-lenet"));
        if (previous) {
            model = std::move(previous->model);
            state = std::move(*previous->state);
            nn::train(model, data.as_training(), tc, state);
        } else {
            model = train_lenet(cfg, data, state);
        }
        write_json({{"zeta", data.zeta}, {"noise_var", data.noise_var}}, meta_path(out, which));
        const LenetDataset validation = load_lenet_dataset(out.lenet_validation());
        save_error_stats(lenet_error_stats(cfg, model, data, validation), out.error_stats());
    }
    nn::save_checkpoint(ckpt, model, &state);
    write_loss_csv(state.loss_trace, out.loss_csv(which));
    log << name_of(which) << ": " << state.epochs_done << " epochs, final loss "
        << (state.loss_trace.empty() ? std::string("n/a") : format_double(state.loss_trace.back())) << '\n';
}

double lcnet_test_nmse(const LcnetDataset& test, const std::function<CovMatrix(Eigen::Index)>& predict) {
    NmseAccumulator acc;
    for (Eigen::Index i = 0; i < test.size(); ++i) {
        acc.add(test.label(i), predict(i));
    }
    return acc.value();
}

void cmd_eval(const RunConfig& cfg, std::ostream& log) {
    const OutputLayout out = prepare(cfg);
    const LcnetDataset lc_train = load_lcnet_dataset(out.lcnet_train());
    const LcnetDataset lc_test = load_lcnet_dataset(out.lcnet_test());
    const LenetDataset le_train = load_lenet_dataset(out.lenet_train());
    const LenetDataset validation = load_lenet_dataset(out.lenet_validation());
    const auto val_pairs = pairs_of(validation);
    const std::uint64_t draw_seed = stream_seed(cfg, "eval-draws");

    std::ofstream csv(out.metrics(), std::ios::binary);
    if (!csv) {
        throw std::runtime_error("cannot write " + out.metrics());
    }
    csv << kMetricsHeader << '\n';
    auto row = [&](const char* net, double fraction, const char* metric, double value) {
        csv << net << ',' << format_double(fraction) << ',' << cfg.seed << ',' << metric << ','
            << format_double(value) << '\n';
    };

    for (double f : cfg.train_fractions) {
        // Full-fraction models come from `train` when present; training is deterministic, so this is a shortcut.
        const bool full = f == 1.0;
        nn::MlpModel lcnet;
        if (full && fs::exists(out.checkpoint(Network::lcnet))) {
            lcnet = nn::load_checkpoint(out.checkpoint(Network::lcnet)).model;
        } else {
            nn::TrainState st;
            lcnet = train_lcnet(cfg, lc_train.head(fraction_count(lc_train.size(), f)), st);
        }
        const double nmse = lcnet_test_nmse(lc_test, [&](Eigen::Index i) {
            const Eigen::Vector3d in = lc_test.inputs.col(i);
            return nn::lcnet_predict(lcnet, lc_train.coefficient, in.head<2>(), in(2));
        });
        row("lcnet", f, "nmse_r", nmse);

        nn::MlpModel lenet;
        if (full && fs::exists(out.checkpoint(Network::lenet))) {
            lenet = nn::load_checkpoint(out.checkpoint(Network::lenet)).model;
        } else {
            nn::TrainState st;
            lenet = train_lenet(cfg, le_train.head(fraction_count(le_train.size(), f)), st);
        }
        const Eigen::Matrix2Xd err = location_errors(lenet_localizer(lenet, le_train.zeta), val_pairs,
                                                     le_train.noise_var, cfg.sizes.error_draws, draw_seed);
        const double rmse = std::sqrt(err.squaredNorm() / (2.0 * static_cast<double>(err.cols())));
        row("lenet", f, "rmse_l", rmse);
        log << "fraction " << format_double(f) << ": NMSE_R " << format_double(nmse) << ", RMSE_L "
            << format_double(rmse) << '\n';
    }
    const Position centroid = cfg.scene().plane_bounds.centroid();
    std::vector<Position> centroid_err;
    for (Eigen::Index i = 0; i < validation.size(); ++i) {
        centroid_err.push_back(centroid - validation.positions.col(i));
    }
    row("centroid", 1.0, "rmse_l", rmse_l(centroid_err));
}

TrainedModels load_models(const RunConfig& cfg) {
    const OutputLayout out{cfg.output_dir};
    TrainedModels m;
    for (Network n : {Network::lcnet, Network::lenet}) {
        if (!fs::exists(out.checkpoint(n))) {
            throw ConfigError("missing checkpoint " + out.checkpoint(n) + " (run train --which " + name_of(n) + ")");
        }
    }
    m.lcnet = nn::load_checkpoint(out.checkpoint(Network::lcnet)).model;
    m.lenet = nn::load_checkpoint(out.checkpoint(Network::lenet)).model;
    m.lcnet_coefficient = read_json(meta_path(out, Network::lcnet)).at("coefficient").get<double>();
    m.zeta = read_json(meta_path(out, Network::lenet)).at("zeta").get<double>();
    if (!fs::exists(out.error_stats())) {
        throw ConfigError("missing " + out.error_stats() + " (run train --which lenet)");
    }
    m.stats = load_error_stats(out.error_stats());
    return m;
}

ExperimentReport cmd_run(const RunConfig& cfg, bool train_missing, std::ostream& log) {
    const OutputLayout out = prepare(cfg);
    if (train_missing) {
        if (!fs::exists(out.lcnet_train()) || !fs::exists(out.lenet_train())) {
            cmd_gen_dataset(cfg, log);
        }
        for (Network n : {Network::lcnet, Network::lenet}) {
            if (!fs::exists(out.checkpoint(n)) || (n == Network::lenet && !fs::exists(out.error_stats()))) {
                cmd_train(cfg, n, false, log);
            }
        }
    }
    const TrainedModels models = load_models(cfg);
    const ChannelGrid grid = grid_for(cfg, out.grid());
    const ExperimentReport report = run_experiment(cfg.experiment(), models, &grid);
    write_report_csv(report, out.report());
    log << "report: " << report.rows.size() << " rows -> " << out.report() << '\n';
    return report;
}

} // namespace ccm
