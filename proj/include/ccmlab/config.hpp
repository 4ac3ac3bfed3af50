// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ccmlab/geometry.hpp"
#include "ccmlab/nn.hpp"
#include "ccmlab/scene.hpp"
#include "ccmlab/sim.hpp"
#include "ccmlab/timing.hpp"

namespace ccm {

/// Hyperparameters for one network. Epoch counts are totals, so a resumed run
/// continues until `epochs` have been completed.
struct TrainSettings {
    double learning_rate = 1e-3;
    int batch_size = 64;
    int epochs = 60;
    int plateau_patience = 5;

    nn::TrainConfig to_train_config(std::uint64_t seed) const;
};

struct DatasetSizes {
    int grid_points_per_side = 250; ///< N_p = 62500
    int lcnet_train_locations = 30000;
    int lcnet_train_speeds = 40;
    int lcnet_test_locations = 1000;
    int lcnet_test_speeds = 5;
    int lenet_train_samples = 107500; ///< W_t
    int error_samples = 9000;         ///< W
    int error_draws = 20;             ///< Q
};

/// Everything a command needs. Defaults are the full-size setting.
struct RunConfig {
    std::optional<std::string> scene_file; ///< unset: built-in default scene
    ArrayConfig array;
    FrameTiming timing;
    SpeedRange speeds;
    double sigma_c = 2.0;
    double sigma_v = 0.0;
    double lenet_noise_ratio = 1e-2; ///< N_B sigma~^2 / E||h||^2
    double pilot_noise_std = 1.0;
    std::vector<double> snr_db{0.0, 5.0, 10.0, 15.0, 20.0};
    int m_p = 60;
    DatasetSizes sizes;
    TrainSettings lcnet_training;
    TrainSettings lenet_training{1e-3, 64, 60, 5};
    std::vector<double> train_fractions{0.25, 0.5, 1.0};
    int n_trajectories = 20;
    int n_coct = 10;
    TrajectoryMode mode = TrajectoryMode::constant;
    double sigma_a = 0.7853981633974483;
    FeedbackVariant feedback = FeedbackVariant::location;
    std::vector<Method> methods = all_methods();
    std::uint64_t seed = 20240601;
    std::string output_dir = "ccmlab-out";

    void validate() const;
    Scene scene() const;
    ExperimentConfig experiment() const;
};

void to_json(nlohmann::json& j, const RunConfig& cfg);
void from_json(const nlohmann::json& j, RunConfig& cfg);

/// Missing fields keep their defaults; unknown fields and invalid values are rejected.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& text);
void save_run_config(const RunConfig& cfg, const std::string& path);

} // namespace ccm
