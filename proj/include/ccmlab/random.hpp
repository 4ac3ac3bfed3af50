// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstdint>
#include <random>
#include <string_view>

namespace ccm {

/// Seeded generator with portable uniform/normal draws.
///
/// The standard distributions are implementation-defined, so the draws are
/// built directly on mt19937_64 to keep outputs identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream derived from a master seed and a stream name.
    static Rng substream(std::uint64_t master, std::string_view name, std::uint64_t index = 0);

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Circularly-symmetric complex Gaussian with E|z|^2 = variance.
    std::complex<double> complex_normal(double variance);

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// 64-bit FNV-1a, used to turn stream names into seed material.
std::uint64_t fnv1a(std::string_view text);

} // namespace ccm
