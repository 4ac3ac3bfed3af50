// SPDX-License-Identifier: Apache-2.0
#include "ccmlab/estimator.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>
#include <string>

#include "ccmlab/errors.hpp"

namespace ccm {

namespace {

// Total pilot energy for water level nu = sigma^2 * mu.
double allocated(std::span<const double> lambda, double nu, double noise_var) {
    double total = 0.0;
    for (double l : lambda) {
        total += std::max(nu - noise_var / l, 0.0);
    }
    return total;
}

} // namespace

double water_level(std::span<const double> lambda, double energy, double noise_std) {
    if (lambda.empty() || !(energy > 0.0)) {
        throw DomainError("water filling needs at least one mode and positive energy");
    }
    const double noise_var = noise_std * noise_std;
    // Work with nu = sigma^2 mu so that sigma = 0 degenerates to equal power.
    double lo = 0.0;
    double hi = energy;
    for (double l : lambda) {
        if (!(l > 0.0)) {
            throw DomainError("water filling eigenvalues must be positive");
        }
        hi = std::max(hi, noise_var / l + energy);
    }
    for (int it = 0; it < 400 && hi - lo > 1e-12 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (allocated(lambda, mid, noise_var) < energy ? lo : hi) = mid;
    }
    double nu = 0.5 * (lo + hi);
    // exact level on the active set found by the search
    double inv_sum = 0.0;
    int active = 0;
    for (double l : lambda) {
        if (nu - noise_var / l > 0.0) {
            inv_sum += noise_var / l;
            ++active;
        }
    }
    if (active > 0) {
        const double exact = (energy + inv_sum) / active;
        bool consistent = true;
        for (double l : lambda) {
            if ((exact - noise_var / l > 0.0) != (nu - noise_var / l > 0.0)) {
                consistent = false;
            }
        }
        if (consistent) {
            nu = exact;
        }
    }
    return noise_var > 0.0 ? nu / noise_var : std::numeric_limits<double>::infinity();
}

PilotMatrix design_pilots(const CovMatrix& r, int m_p, double energy, double noise_std) {
    require_hermitian(r, "design_pilots");
    if (m_p < 1) {
        throw DomainError("pilot length must be at least 1");
    }
    if (!(energy > 0.0) || !(noise_std >= 0.0)) {
        throw DomainError("pilot energy must be positive and noise std nonnegative");
    }
    const auto n = r.rows();
    Eigen::SelfAdjointEigenSolver<CovMatrix> eig(r);
    if (eig.info() != Eigen::Success) {
        throw NumericalError("design_pilots: eigendecomposition failed");
    }
    const double tol = 1e-12 * std::abs(r.trace().real()) / static_cast<double>(n);

    // strongest modes first; at most m_p of them can be sounded
    std::vector<Eigen::Index> modes;
    for (Eigen::Index i = n; i-- > 0;) {
        if (eig.eigenvalues()[i] > tol && static_cast<int>(modes.size()) < m_p) {
            modes.push_back(i);
        }
    }
    if (modes.empty()) {
        throw DomainError("covariance has no eigenvalue above tolerance; nothing to sound");
    }
    std::vector<double> lambda;
    for (auto i : modes) {
        lambda.push_back(eig.eigenvalues()[i]);
    }
    const double noise_var = noise_std * noise_std;
    const double mu = water_level(lambda, energy, noise_std);
    const double nu = noise_var > 0.0 ? mu * noise_var : energy / static_cast<double>(lambda.size());

    PilotMatrix p;
    p.entries = Eigen::MatrixXcd::Zero(n, m_p);
    p.noise_std = noise_std;
    for (std::size_t k = 0; k < modes.size(); ++k) {
        const double power = std::max(nu - noise_var / lambda[k], 0.0);
        p.entries.col(static_cast<Eigen::Index>(k)) = std::sqrt(power) * eig.eigenvectors().col(modes[k]);
    }
    p.energy = energy;
    return p;
}

PilotMatrix ls_pilots(int n_antennas, int m_p, double energy, double noise_std) {
    if (m_p < n_antennas) {
        throw DomainError("LS sounding needs at least N_B pilot uses");
    }
    if (!(energy > 0.0)) {
        throw DomainError("pilot energy must be positive");
    }
    PilotMatrix p;
    p.entries = Eigen::MatrixXcd::Zero(n_antennas, m_p);
    p.entries.leftCols(n_antennas).diagonal().setConstant(std::sqrt(energy / n_antennas));
    p.energy = energy;
    p.noise_std = noise_std;
    return p;
}

PilotObservation simulate_pilot_rx(const Channel& h, const PilotMatrix& pilots, Rng& rng) {
    if (h.size() != pilots.antennas()) {
        throw DomainError("channel length does not match the pilot matrix");
    }
    PilotObservation y;
    y.noise_var = pilots.noise_std * pilots.noise_std;
    y.values = pilots.entries.adjoint() * h;
    if (y.noise_var > 0.0) {
        for (auto& v : y.values) {
            v += rng.complex_normal(y.noise_var);
        }
    }
    return y;
}

PilotObservation simulate_pilot_rx(const Channel& h, const PilotMatrix& pilots, std::uint64_t seed) {
    Rng rng(seed);
    return simulate_pilot_rx(h, pilots, rng);
}

LmmseEstimator::LmmseEstimator(const PilotMatrix& pilots, const CovMatrix& r) {
    require_hermitian(r, "lmmse_estimate");
    const auto n = r.rows();
    if (n != pilots.antennas()) {
        throw DomainError("covariance size does not match the pilot matrix");
    }
    Eigen::SelfAdjointEigenSolver<CovMatrix> eig(r);
    if (eig.info() != Eigen::Success) {
        throw NumericalError("lmmse_estimate: eigendecomposition failed");
    }
    const double scale = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 0.0);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (eig.eigenvalues()[i] > 1e-14 * scale) {
            keep.push_back(i);
        }
    }
    w_ = Eigen::MatrixXcd::Zero(n, pilots.length());
    if (keep.empty()) {
        return;
    }
    const auto rank = static_cast<Eigen::Index>(keep.size());
    Eigen::MatrixXcd l(n, rank);
    for (Eigen::Index k = 0; k < rank; ++k) {
        l.col(k) = std::sqrt(eig.eigenvalues()[keep[static_cast<std::size_t>(k)]]) *
                   eig.eigenvectors().col(keep[static_cast<std::size_t>(k)]);
    }
    const Eigen::MatrixXcd lp = l.adjoint() * pilots.entries; // rank x M_p
    Eigen::MatrixXcd k = lp * lp.adjoint();
    k.diagonal().array() += pilots.noise_std * pilots.noise_std;
    Eigen::LLT<Eigen::MatrixXcd> llt(k);
    if (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().cwiseAbs().minCoeff() > 0.0)) {
        throw NumericalError("LMMSE system is singular (noiseless rank-deficient pilots)");
    }
    w_ = l * llt.solve(lp);
}

Channel LmmseEstimator::estimate(const PilotObservation& y) const {
    if (y.values.size() != w_.cols()) {
        throw DomainError("observation length does not match the pilot matrix");
    }
    return w_ * y.values;
}

Channel lmmse_estimate(const PilotObservation& y, const PilotMatrix& pilots, const CovMatrix& r) {
    return LmmseEstimator(pilots, r).estimate(y);
}

LsEstimator::LsEstimator(const PilotMatrix& pilots) {
    const Eigen::MatrixXcd gram = pilots.entries * pilots.entries.adjoint();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(gram, Eigen::EigenvaluesOnly);
    const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
    if (!(top > 0.0) || eig.eigenvalues().minCoeff() <= 1e-12 * top) {
        throw NumericalError("LS estimation needs full-rank pilots");
    }
    w_ = gram.llt().solve(pilots.entries);
}

Channel LsEstimator::estimate(const PilotObservation& y) const {
    if (y.values.size() != w_.cols()) {
        throw DomainError("observation length does not match the pilot matrix");
    }
    return w_ * y.values;
}

Channel ls_estimate(const PilotObservation& y, const PilotMatrix& pilots) { return LsEstimator(pilots).estimate(y); }

double nmse_r(std::span<const CovMatrix> truth, std::span<const CovMatrix> est) {
    if (truth.size() != est.size() || truth.empty()) {
        throw DomainError("nmse_r needs equally sized, non-empty lists");
    }
    NmseAccumulator acc;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        acc.add(truth[i], est[i]);
    }
    return acc.value();
}

double nmse_h(std::span<const Channel> truth, std::span<const Channel> est) {
    if (truth.size() != est.size() || truth.empty()) {
        throw DomainError("nmse_h needs equally sized, non-empty lists");
    }
    NmseAccumulator acc;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        acc.add(truth[i], est[i]);
    }
    return acc.value();
}

double rmse_l(std::span<const Position> errors) {
    if (errors.empty()) {
        throw DomainError("rmse_l needs at least one error");
    }
    double sum = 0.0;
    for (const auto& e : errors) {
        sum += e.squaredNorm();
    }
    return std::sqrt(sum / (2.0 * static_cast<double>(errors.size())));
}

double snr(double energy, int m_p, double noise_var, std::span<const Channel> channels) {
    if (channels.empty() || m_p < 1 || !(noise_var > 0.0)) {
        throw DomainError("snr needs channels, a positive pilot length and positive noise variance");
    }
    double sum = 0.0;
    for (const auto& h : channels) {
        sum += h.squaredNorm();
    }
    return energy / (m_p * noise_var * static_cast<double>(channels.size())) * sum;
}

} // namespace ccm
