// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace ccm {

/// Covariance coherence time (COCT) layout: an upload/estimation stage of
/// length t_o followed by n_cct channel coherence times (CCTs) of length t_c.
struct FrameTiming {
    double t_co = 0.255; ///< COCT length, s
    double t_c = 0.005;  ///< CCT length, s
    double t_o = 0.005;  ///< upload + estimation stage, s
    int n_cct = 50;      ///< CCTs per COCT

    /// Elapsed time from the COCT start to the start of CCT q (1-based).
    double offset(int q) const { return t_o + (q - 1) * t_c; }
    /// Offset of the last CCT; the largest moving-region radius is speed * horizon().
    double horizon() const { return offset(n_cct); }

    void validate() const;

    /// t_co = t_o + n_cct * t_c.
    static FrameTiming packed(double t_o, double t_c, int n_cct) { return {t_o + n_cct * t_c, t_c, t_o, n_cct}; }

    bool operator==(const FrameTiming&) const = default;
};

} // namespace ccm
