// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ccmlab/covariance.hpp"
#include "ccmlab/geometry.hpp"
#include "ccmlab/random.hpp"
#include "ccmlab/scene.hpp"

namespace ccm {

/// Pilot sequence for one COCT: column m is the transmit vector of pilot use m.
struct PilotMatrix {
    Eigen::MatrixXcd entries; ///< N_B x M_p
    double energy = 0.0;      ///< tr(P P^H)
    double noise_std = 0.0;   ///< receiver noise standard deviation sigma

    Eigen::Index antennas() const { return entries.rows(); }
    Eigen::Index length() const { return entries.cols(); }
};

struct PilotObservation {
    Eigen::VectorXcd values; ///< M_p received samples
    double noise_var = 0.0;
};

/// Water-filling pilots on the eigenmodes of R: mode i receives power
/// sigma^2 * max(mu - 1/lambda_i, 0) with mu set so the total is `energy`.
/// Columns beyond the sounded modes are zero. Throws DomainError when R has
/// no eigenvalue above 1e-12 * tr(R) / N_B.
PilotMatrix design_pilots(const CovMatrix& r, int m_p, double energy, double noise_std);

/// Orthogonal full-power sounding: sqrt(energy / N_B) [I, 0].
PilotMatrix ls_pilots(int n_antennas, int m_p, double energy, double noise_std);

/// Water level found by bisection for eigenvalues `lambda` (all > 0),
/// such that sum sigma^2 max(mu - 1/lambda_i, 0) = energy.
double water_level(std::span<const double> lambda, double energy, double noise_std);

/// y = P^H h + n, n ~ CN(0, sigma^2 I).
PilotObservation simulate_pilot_rx(const Channel& h, const PilotMatrix& pilots, Rng& rng);
PilotObservation simulate_pilot_rx(const Channel& h, const PilotMatrix& pilots, std::uint64_t seed);

/// Linear MMSE estimator for a fixed (pilots, R) pair; build once per COCT.
///
/// Applies R P (P^H R P + sigma^2 I)^-1, evaluated through R = L L^H as
/// L (L^H P P^H L + sigma^2 I)^-1 L^H P so the solve is rank(R) x rank(R).
class LmmseEstimator {
public:
    LmmseEstimator(const PilotMatrix& pilots, const CovMatrix& r);
    Channel estimate(const PilotObservation& y) const;
    const Eigen::MatrixXcd& matrix() const { return w_; }

private:
    Eigen::MatrixXcd w_; ///< N_B x M_p
};

Channel lmmse_estimate(const PilotObservation& y, const PilotMatrix& pilots, const CovMatrix& r);

/// Least squares (P P^H)^-1 P y. Throws NumericalError for rank-deficient pilots.
class LsEstimator {
public:
    explicit LsEstimator(const PilotMatrix& pilots);
    Channel estimate(const PilotObservation& y) const;

private:
    Eigen::MatrixXcd w_;
};

Channel ls_estimate(const PilotObservation& y, const PilotMatrix& pilots);

/// sum ||R - R^||_F^2 / sum ||R||_F^2
double nmse_r(std::span<const CovMatrix> truth, std::span<const CovMatrix> est);
/// sum ||h - h^||^2 / sum ||h||^2
double nmse_h(std::span<const Channel> truth, std::span<const Channel> est);
/// sqrt(sum ||n||^2 / (2 * count)), per-coordinate location RMSE.
double rmse_l(std::span<const Position> errors);
/// (P / (M_p sigma^2 count)) sum ||h||^2
double snr(double energy, int m_p, double noise_var, std::span<const Channel> channels);

/// Running numerator/denominator of an NMSE ratio.
struct NmseAccumulator {
    double error = 0.0;
    double reference = 0.0;

    void add(const Channel& truth, const Channel& est) {
        error += (truth - est).squaredNorm();
        reference += truth.squaredNorm();
    }
    void add(const CovMatrix& truth, const CovMatrix& est) {
        error += (truth - est).squaredNorm();
        reference += truth.squaredNorm();
    }
    double value() const { return error / reference; }
};

} // namespace ccm
