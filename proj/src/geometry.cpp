// SPDX-License-Identifier: Apache-2.0
#include "ccmlab/geometry.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "ccmlab/errors.hpp"

namespace ccm {

void ArrayConfig::validate() const {
    if (n_ele < 1 || n_az < 1) {
        throw ConfigError("array dimensions must be positive, got " + std::to_string(n_ele) + "x" +
                          std::to_string(n_az));
    }
    if (!(spacing_ratio > 0.0) || !std::isfinite(spacing_ratio)) {
        throw ConfigError("antenna spacing ratio must be positive and finite");
    }
}

Channel steering_vector(const ArrayConfig& cfg, double elevation, double azimuth) {
    cfg.validate();
    constexpr double pi = std::numbers::pi;
    if (!(elevation >= 0.0 && elevation <= pi)) {
        throw DomainError("elevation outside [0, pi]: " + std::to_string(elevation));
    }
    if (!(azimuth >= -pi && azimuth <= pi)) {
        throw DomainError("azimuth outside [-pi, pi]: " + std::to_string(azimuth));
    }

    const double k = 2.0 * pi * cfg.spacing_ratio;
    const double ele_phase = k * std::cos(elevation);
    const double az_phase = k * std::sin(elevation) * std::sin(azimuth);
    const double norm = 1.0 / std::sqrt(static_cast<double>(cfg.antennas()));

    Channel a(cfg.antennas());
    for (int p = 0; p < cfg.n_az; ++p) {
        for (int q = 0; q < cfg.n_ele; ++q) {
            a[p * cfg.n_ele + q] = std::polar(norm, p * az_phase + q * ele_phase);
        }
    }
    return a;
}

Channel synthesize_channel(const ArrayConfig& cfg, std::span<const PathComponent> paths) {
    if (paths.empty()) {
        throw DomainError("cannot synthesize a channel from an empty path list");
    }
    Channel h = Channel::Zero(cfg.antennas());
    for (const auto& path : paths) {
        if (!std::isfinite(path.gain.real()) || !std::isfinite(path.gain.imag())) {
            throw DomainError("path gain is not finite");
        }
        h += path.gain * steering_vector(cfg, path.elevation, path.azimuth);
    }
    return h;
}

} // namespace ccm
