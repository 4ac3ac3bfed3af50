// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include <Eigen/Dense>

#include "ccmlab/covariance.hpp"
#include "ccmlab/nn.hpp"
#include "ccmlab/random.hpp"
#include "ccmlab/sim.hpp"

namespace ccm {

/// (location, speed) -> packed CCM pairs. Labels are divided by `coefficient`.
struct LcnetDataset {
    Eigen::MatrixXd inputs;   ///< 3 x S: x1, x2, v
    Eigen::MatrixXd labels;   ///< N_B^2 x S packed scaled CCMs
    double coefficient = 1.0; ///< sum tr(R) / (N_B S) before scaling
    int n_antennas = 0;

    Eigen::Index size() const { return inputs.cols(); }
    nn::Dataset as_training() const { return {inputs, labels}; }
    LcnetDataset head(Eigen::Index count) const;
    CovMatrix label(Eigen::Index i) const { return unpack_cov(labels.col(i)) * coefficient; }
};

/// channel -> location pairs.
struct LenetDataset {
    Eigen::MatrixXcd channels; ///< N_B x S (noisy for the training set)
    Eigen::Matrix2Xd positions;
    double zeta = 1.0;         ///< mean noiseless channel norm
    double noise_var = 0.0;    ///< per-entry variance of the added CN noise

    Eigen::Index size() const { return channels.cols(); }
    nn::Dataset as_training() const;
    LenetDataset head(Eigen::Index count) const;
};

/// `locations` uniform points in the plane, `speeds` uniform speeds per point,
/// oracle labels from the grid.
LcnetDataset make_lcnet_dataset(const ChannelGrid& grid, const Bounds& bounds, const FrameTiming& timing,
                                SpeedRange speeds, int locations, int speeds_per_location, Rng& rng);

/// Uniform locations with noiseless channels. With noise_ratio > 0, the
/// channels are corrupted by CN(0, s I) where N_B s = noise_ratio * mean ||h||^2.
LenetDataset make_lenet_dataset(const ArrayConfig& cfg, const Scene& scene, int samples, double noise_ratio,
                                Rng& rng);

void save_lcnet_dataset(const LcnetDataset& d, const std::string& path);
LcnetDataset load_lcnet_dataset(const std::string& path);
void save_lenet_dataset(const LenetDataset& d, const std::string& path);
LenetDataset load_lenet_dataset(const std::string& path);

} // namespace ccm
