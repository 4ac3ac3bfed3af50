// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ccmlab/covariance.hpp"
#include "ccmlab/geometry.hpp"
#include "ccmlab/nn.hpp"
#include "ccmlab/scene.hpp"

namespace ccm {

/// Gaussian model N(mean, cov) of the LENET location error.
struct ErrorStats {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
    std::size_t samples = 0;     ///< W
    std::size_t draws = 0;       ///< Q
    double noise_var = 0.0;      ///< channel noise variance used for the draws
    std::uint64_t seed = 0;
};

struct GaussianBelief {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
};

struct DenoiseInputs {
    Position uploaded_location = Position::Zero(); ///< reported location for the new COCT
    double uploaded_noise_var = 0.0;               ///< sigma_c^2
    Position lenet_estimate = Position::Zero();    ///< location inferred from the last fed-back channel
    double speed = 0.0;                            ///< speed reported for the previous COCT
    double coct_duration = 0.0;                    ///< T_co
};

/// Maps a batch of channels (N_B x K) to plane coordinates (2 x K).
using BatchLocalizer = std::function<Eigen::MatrixXd(const Eigen::MatrixXcd&)>;

BatchLocalizer lenet_localizer(const nn::MlpModel& lenet, double zeta);

/// Localizer errors (estimate - truth) for Q noisy draws of each reference
/// channel, sample-major. Noise entries are CN(0, noise_var).
Eigen::Matrix2Xd location_errors(const BatchLocalizer& localizer,
                                 std::span<const std::pair<Channel, Position>> samples, double noise_var,
                                 int draws_per_sample, std::uint64_t seed);

/// Sample mean and unbiased covariance of localizer errors when each of the W
/// reference channels is corrupted by Q independent CN(0, noise_var I) draws.
/// Throws DomainError when W * Q < 2.
ErrorStats estimate_error_stats(const BatchLocalizer& localizer,
                                std::span<const std::pair<Channel, Position>> samples, double noise_var,
                                int draws_per_sample, std::uint64_t seed);

/// Random-walk prediction: covariance grows by (speed * T_co)^2 / 4 per axis,
/// the covariance of a uniform disc of radius speed * T_co.
GaussianBelief motion_prior(const GaussianBelief& belief, double speed, double coct_duration);

/// Product of the motion-predicted prior and the two location measurements
/// (bias-corrected LENET output and the uploaded location). A covariance whose
/// smallest eigenvalue is below 1e-9 m^2 is lifted by 1e-9 I before inversion.
GaussianBelief fuse(const GaussianBelief& prior, const ErrorStats& stats, const DenoiseInputs& in);

/// Covariance as used by fuse(): unchanged unless its smallest eigenvalue is below the floor.
Eigen::Matrix2d regularized(const Eigen::Matrix2d& cov);

/// How the last CCT of a COCT is reported back to the BS.
enum class FeedbackVariant { location, channel };

/// Per-COCT inputs reported by the user.
struct Upload {
    Position location = Position::Zero();
    double speed = 0.0;
};

/// What the user feeds back after COCT k: either the LENET location (location
/// variant) or the estimated last channel (channel variant).
using Feedback = std::variant<Position, Channel>;

struct DenoiseTrace {
    std::vector<Position> locations;        ///< location fed to the CCM estimator per COCT
    std::vector<CovMatrix> ccms;            ///< estimated CCM per COCT
    std::vector<GaussianBelief> beliefs;    ///< posterior after each COCT's update
    std::vector<Position> lenet_estimates;  ///< LENET output from each COCT's feedback
};

struct DenoiseSetup {
    ErrorStats stats;
    double sigma_c = 0.0;
    double coct_duration = 0.0;
    Bounds bounds;
    /// Needed by the channel variant to turn a fed-back channel into a location.
    BatchLocalizer localizer;
};

/// Location-denoised CCM estimation over one trajectory. COCT 1 uses the raw
/// upload; from COCT 2 on the upload is fused with the motion prior and the
/// LENET estimate from the previous COCT's feedback. Corrected locations are
/// clamped to the coverage plane before the CCM is estimated.
///
/// `estimate_ccm(location, speed)` returns the CCM for one COCT and
/// `run_coct(k, ccm)` performs channel estimation for COCT k with that CCM and
/// returns the user's feedback.
DenoiseTrace run_denoised_pipeline(std::span<const Upload> uploads, const DenoiseSetup& setup,
                                   const std::function<CovMatrix(const Position&, double)>& estimate_ccm,
                                   const std::function<Feedback(std::size_t, const CovMatrix&)>& run_coct);

void save_error_stats(const ErrorStats& stats, const std::string& path);
ErrorStats load_error_stats(const std::string& path);

} // namespace ccm
