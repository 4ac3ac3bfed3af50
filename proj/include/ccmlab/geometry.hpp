// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <span>

#include <Eigen/Dense>

namespace ccm {

using cplx = std::complex<double>;

/// Per-antenna complex gains of the BS->user downlink channel.
using Channel = Eigen::VectorXcd;

/// Uniform planar array at the base station.
struct ArrayConfig {
    int n_ele = 3;              ///< antennas along elevation
    int n_az = 4;               ///< antennas along azimuth
    double spacing_ratio = 0.5; ///< element spacing over carrier wavelength

    int antennas() const { return n_ele * n_az; }

    /// Throws ConfigError when a field is out of range.
    void validate() const;

    bool operator==(const ArrayConfig&) const = default;
};

/// One departure path: complex amplitude and departure angles (radians).
struct PathComponent {
    cplx gain{1.0, 0.0};
    double elevation = 0.0; ///< [0, pi], measured from +z
    double azimuth = 0.0;   ///< [-pi, pi], measured from +x toward +y
};

/// Unit-norm UPA response a_az(theta, phi) (x) a_ele(theta) / sqrt(N_B).
///
/// Entry p * n_ele + q holds the product of azimuth element p and elevation
/// element q, so the elevation index runs fastest.
Channel steering_vector(const ArrayConfig& cfg, double elevation, double azimuth);

/// Gain-weighted sum of path steering vectors. Throws DomainError on an empty list.
Channel synthesize_channel(const ArrayConfig& cfg, std::span<const PathComponent> paths);

} // namespace ccm
