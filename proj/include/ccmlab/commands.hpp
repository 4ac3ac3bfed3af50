// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <iosfwd>
#include <string>

#include "ccmlab/config.hpp"
#include "ccmlab/datasets.hpp"
#include "ccmlab/sim.hpp"

namespace ccm {

enum class Network { lcnet, lenet };

Network parse_network(const std::string& s);

/// File layout inside RunConfig::output_dir.
struct OutputLayout {
    std::string dir;

    std::string file(const std::string& name) const;
    std::string lcnet_train() const { return file("lcnet_train.csv"); }
    std::string lcnet_test() const { return file("lcnet_test.csv"); }
    std::string lenet_train() const { return file("lenet_train.csv"); }
    std::string lenet_validation() const { return file("lenet_validation.csv"); }
    std::string grid() const { return file("grid_channels.bin"); }
    std::string checkpoint(Network n) const { return file(n == Network::lcnet ? "lcnet.ckpt" : "lenet.ckpt"); }
    std::string loss_csv(Network n) const { return file(n == Network::lcnet ? "lcnet_loss.csv" : "lenet_loss.csv"); }
    std::string error_stats() const { return file("error_stats.json"); }
    std::string metrics() const { return file("metrics.csv"); }
    std::string report() const { return file("report.csv"); }
    std::string config_echo() const { return file("config.json"); }
};

inline constexpr const char* kMetricsHeader = "network,train_fraction,seed,metric,value";

/// Loads the cached channel grid when it matches the config, otherwise builds
/// (and, when `cache_path` is non-empty, stores) it.
ChannelGrid grid_for(const RunConfig& cfg, const std::string& cache_path);

void cmd_gen_dataset(const RunConfig& cfg, std::ostream& log);

/// Trains one network on its full training set. With
/// `resume`, continues from the checkpoint's optimizer state up to the
/// configured epoch total.
void cmd_train(const RunConfig& cfg, Network which, bool resume, std::ostream& log);

/// NMSE_R of LCNET on the test set and RMSE_L of LENET (plus the centroid
/// baseline) for each configured training fraction.
void cmd_eval(const RunConfig& cfg, std::ostream& log);

/// Runs the experiment with the trained models. With `train_missing`,
/// datasets and models that do not exist yet are produced first.
ExperimentReport cmd_run(const RunConfig& cfg, bool train_missing, std::ostream& log);

/// NMSE_R over a test set: `predict(i)` returns the CCM for sample i.
double lcnet_test_nmse(const LcnetDataset& test, const std::function<CovMatrix(Eigen::Index)>& predict);

nn::MlpModel train_lcnet(const RunConfig& cfg, const LcnetDataset& data, nn::TrainState& state);
nn::MlpModel train_lenet(const RunConfig& cfg, const LenetDataset& data, nn::TrainState& state);

/// Checkpoints plus their metadata and LENET error statistics.
TrainedModels load_models(const RunConfig& cfg);

} // namespace ccm
