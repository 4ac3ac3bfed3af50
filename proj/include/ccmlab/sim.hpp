// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccmlab/covariance.hpp"
#include "ccmlab/denoise.hpp"
#include "ccmlab/geometry.hpp"
#include "ccmlab/nn.hpp"
#include "ccmlab/scene.hpp"
#include "ccmlab/timing.hpp"

namespace ccm {

enum class TrajectoryMode { constant, dynamic };

const char* to_string(TrajectoryMode m);
TrajectoryMode parse_trajectory_mode(const std::string& s);

struct CoctRecord {
    Position start = Position::Zero();      ///< position at the COCT start
    double speed = 0.0;
    std::vector<Position> cct;              ///< position at each CCT, q = 1..N
    Position end = Position::Zero();        ///< position at the next COCT start
    std::vector<double> heading_changes;    ///< dynamic mode only, one before every leg after the first
};

struct Trajectory {
    TrajectoryMode mode = TrajectoryMode::constant;
    std::vector<CoctRecord> cocts;
};

struct SpeedRange {
    double lo = 2.0;
    double hi = 10.0;
};

/// Random walk inside `bounds`. Each COCT draws a fresh speed and heading;
/// dynamic mode also turns by a truncated N(0, sigma_a^2) angle at every CCT.
/// Headings reflect specularly off the edges of `bounds`.
Trajectory gen_trajectory(TrajectoryMode mode, const FrameTiming& timing, const Bounds& bounds, SpeedRange speeds,
                          int n_coct, std::uint64_t seed, double sigma_a = std::numbers::pi / 4.0);

/// Moves `distance` along `heading`, reflecting off the edges; updates heading.
Position advance(const Position& from, double& heading, double distance, const Bounds& bounds);

/// Cold start gives fallback_scale * I, otherwise the uncentered average of
/// h h^H over the previous COCT's estimated channels.
CovMatrix statistical_ccm(const std::optional<std::span<const Channel>>& prev_channels, double fallback_scale,
                          int n_antennas);

enum class Method { ls, identity_lmmse, statistical, ulccme_raw, ulccme_denoised, ulccme_noiseless, perfect };

const char* to_string(Method m);
Method parse_method(const std::string& s);
std::vector<Method> all_methods();

struct TrainedModels {
    nn::MlpModel lcnet;
    double lcnet_coefficient = 1.0; ///< undoes label scaling; also the identity baseline scale
    nn::MlpModel lenet;
    double zeta = 1.0;              ///< LENET input normalization
    ErrorStats stats;
};

struct ExperimentConfig {
    ArrayConfig array;
    Scene scene;
    FrameTiming timing;
    TrajectoryMode mode = TrajectoryMode::constant;
    SpeedRange speeds;
    int n_trajectories = 20;
    int n_coct = 10;
    double sigma_a = std::numbers::pi / 4.0;
    double sigma_c = 2.0; ///< upload location noise std, m
    double sigma_v = 0.0; ///< upload speed noise std, m/s
    std::vector<double> snr_db{0.0, 5.0, 10.0, 15.0, 20.0};
    int m_p = 60;
    double noise_std = 1.0;
    FeedbackVariant feedback = FeedbackVariant::location;
    std::vector<Method> methods = all_methods();
    std::uint64_t seed = 1;

    void validate() const;
};

struct MethodResult {
    Method method = Method::ls;
    double snr_db = 0.0;
    double nmse_h = 0.0;
    std::optional<double> nmse_r;        ///< against the oracle CCM of the true start and speed
    std::optional<double> rmse_l;        ///< LENET location error (denoised method)
    std::optional<double> location_rmse; ///< error of the location fed to LCNET
};

struct ExperimentReport {
    std::vector<MethodResult> rows; ///< ordered by SNR, then method
    double sigma_c = 0.0;
    double sigma_v = 0.0;
    TrajectoryMode mode = TrajectoryMode::constant;
    std::uint64_t seed = 0;

    const MethodResult& at(Method m, double snr_db) const;
};

/// `grid` supplies oracle CCMs for NMSE_R; without it NMSE_R is left empty.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const TrainedModels& models,
                                const ChannelGrid* grid = nullptr);

inline constexpr const char* kReportHeader = "method,snr_db,nmse_h,nmse_r,rmse_l,sigma_c,sigma_v,mode,seed";

void write_report_csv(const ExperimentReport& report, std::ostream& out);
void write_report_csv(const ExperimentReport& report, const std::string& path);

} // namespace ccm
