// SPDX-License-Identifier: Apache-2.0
#include "ccmlab/covariance.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <limits>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "ccmlab/errors.hpp"
#include "ccmlab/random.hpp"

namespace ccm {

double region_weight(double rho, const RegionSpec& spec) {
    if (!(rho >= 0.0)) {
        throw DomainError("region radius must be nonnegative");
    }
    if (spec.speed < 0.0) {
        throw DomainError("speed must be nonnegative");
    }
    if (spec.speed == 0.0) {
        return rho == 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    }
    const int n = spec.timing.n_cct;
    double sum = 0.0;
    for (int q = 1; q <= n; ++q) {
        const double r = spec.speed * spec.timing.offset(q);
        if (rho <= r) {
            sum += 1.0 / (std::numbers::pi * r * r);
        }
    }
    return sum / n;
}

namespace {

// Weights for candidate points, in the order given; normalizes in place.
void normalize_region(std::vector<WeightedPoint>& pts, const RegionSpec& spec) {
    if (pts.empty()) {
        throw DomainError("no grid point falls inside the moving region of radius " +
                          std::to_string(spec.speed * spec.timing.horizon()) + " m; densify the grid");
    }
    double total = 0.0;
    if (spec.speed == 0.0) {
        for (auto& p : pts) {
            p.probability = 1.0;
        }
        total = static_cast<double>(pts.size());
    } else {
        for (auto& p : pts) {
            p.probability = region_weight((p.position - spec.center).norm(), spec);
            total += p.probability;
        }
    }
    for (auto& p : pts) {
        p.probability /= total;
    }
}

bool inside(const Position& p, const RegionSpec& spec, double radius) { return (p - spec.center).norm() <= radius; }

} // namespace

std::vector<WeightedPoint> region_points(const RegionSpec& spec, std::span<const Position> grid) {
    if (grid.empty()) {
        throw DomainError("region grid is empty");
    }
    if (spec.speed < 0.0) {
        throw DomainError("speed must be nonnegative");
    }
    const double radius = spec.speed * spec.timing.horizon();
    std::vector<WeightedPoint> pts;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (inside(grid[i], spec, radius)) {
            pts.push_back({grid[i], 0.0, i});
        }
    }
    normalize_region(pts, spec);
    return pts;
}

CovMatrix weighted_outer_sum(const Eigen::MatrixXcd& channels, std::span<const WeightedPoint> points) {
    const auto n = channels.rows();
    Eigen::MatrixXcd scaled(n, static_cast<Eigen::Index>(points.size()));
    for (std::size_t s = 0; s < points.size(); ++s) {
        scaled.col(static_cast<Eigen::Index>(s)) =
            std::sqrt(points[s].probability) * channels.col(static_cast<Eigen::Index>(points[s].index));
    }
    CovMatrix r = CovMatrix::Zero(n, n);
    r.selfadjointView<Eigen::Lower>().rankUpdate(scaled);
    // mirror the lower triangle so the result is Hermitian bit-for-bit
    for (Eigen::Index j = 0; j < n; ++j) {
        r(j, j) = cplx(r(j, j).real(), 0.0);
        for (Eigen::Index i = j + 1; i < n; ++i) {
            r(j, i) = std::conj(r(i, j));
        }
    }
    return r;
}

CovMatrix discrete_ccm(const ArrayConfig& cfg, const Scene& scene, const RegionSpec& spec,
                       std::span<const Position> grid) {
    auto pts = region_points(spec, grid);
    Eigen::MatrixXcd channels(cfg.antennas(), static_cast<Eigen::Index>(pts.size()));
    for (std::size_t s = 0; s < pts.size(); ++s) {
        channels.col(static_cast<Eigen::Index>(s)) = channel_map(cfg, scene, pts[s].position);
        pts[s].index = s;
    }
    return weighted_outer_sum(channels, pts);
}

// ---- ChannelGrid ------------------------------------------------------------

ChannelGrid::ChannelGrid(const Bounds& bounds, int points_per_side) : n_(points_per_side), bounds_(bounds) {
    if (points_per_side < 2) {
        throw ConfigError("channel grid needs at least 2 points per side");
    }
    dx_ = bounds_.width() / (n_ - 1);
    dy_ = bounds_.depth() / (n_ - 1);
    positions_.reserve(static_cast<std::size_t>(n_) * n_);
    for (int j = 0; j < n_; ++j) {
        for (int i = 0; i < n_; ++i) {
            // pin the last lattice line to the bound so no point leaves the plane
            const double x = i == n_ - 1 ? bounds_.x_max : bounds_.x_min + i * dx_;
            const double y = j == n_ - 1 ? bounds_.y_max : bounds_.y_min + j * dy_;
            positions_.emplace_back(x, y);
        }
    }
}

ChannelGrid::ChannelGrid(const ArrayConfig& cfg, const Scene& scene, int points_per_side)
    : ChannelGrid(scene.plane_bounds, points_per_side) {
    fingerprint_ = fingerprint(cfg, scene, points_per_side);
    channels_.resize(cfg.antennas(), static_cast<Eigen::Index>(positions_.size()));
    for (std::size_t k = 0; k < positions_.size(); ++k) {
        channels_.col(static_cast<Eigen::Index>(k)) = channel_map(cfg, scene, positions_[k]);
    }
}

std::uint64_t ChannelGrid::fingerprint(const ArrayConfig& cfg, const Scene& scene, int points_per_side) {
    nlohmann::json j;
    j["scene"] = scene;
    j["array"] = {cfg.n_ele, cfg.n_az, cfg.spacing_ratio};
    j["n"] = points_per_side;
    return fnv1a(j.dump());
}

void ChannelGrid::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write channel grid to " + path);
    }
    out << "ccmgrid 1 " << fingerprint_ << ' ' << n_ << ' ' << channels_.rows() << '\n';
    static_assert(std::endian::native == std::endian::little, "grid cache assumes a little-endian host");
    out.write(reinterpret_cast<const char*>(channels_.data()),
              static_cast<std::streamsize>(channels_.size() * sizeof(cplx)));
    if (!out) {
        throw std::runtime_error("failed writing channel grid " + path);
    }
}

std::optional<ChannelGrid> ChannelGrid::load(const std::string& path, const ArrayConfig& cfg, const Scene& scene,
                                             int points_per_side) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        return std::nullopt;
    }
    std::string magic;
    int version = 0;
    std::uint64_t fp = 0;
    int n = 0;
    Eigen::Index rows = 0;
    in >> magic >> version >> fp >> n >> rows;
    in.get();
    if (!in || magic != "ccmgrid" || version != 1 || n != points_per_side || rows != cfg.antennas() ||
        fp != fingerprint(cfg, scene, points_per_side)) {
        return std::nullopt;
    }
    ChannelGrid g(scene.plane_bounds, n);
    g.fingerprint_ = fp;
    g.channels_.resize(rows, static_cast<Eigen::Index>(g.positions_.size()));
    in.read(reinterpret_cast<char*>(g.channels_.data()),
            static_cast<std::streamsize>(g.channels_.size() * sizeof(cplx)));
    if (!in || in.peek() != std::char_traits<char>::eof()) {
        return std::nullopt;
    }
    return g;
}

std::vector<WeightedPoint> ChannelGrid::region(const RegionSpec& spec) const {
    if (spec.speed < 0.0) {
        throw DomainError("speed must be nonnegative");
    }
    const double radius = spec.speed * spec.timing.horizon();
    auto lo = [](double v) { return std::max(0, static_cast<int>(std::floor(v)) - 1); };
    auto hi = [this](double v) { return std::min(n_ - 1, static_cast<int>(std::ceil(v)) + 1); };
    const int i0 = lo((spec.center.x() - radius - bounds_.x_min) / dx_);
    const int i1 = hi((spec.center.x() + radius - bounds_.x_min) / dx_);
    const int j0 = lo((spec.center.y() - radius - bounds_.y_min) / dy_);
    const int j1 = hi((spec.center.y() + radius - bounds_.y_min) / dy_);

    std::vector<WeightedPoint> pts;
    for (int j = j0; j <= j1; ++j) {
        for (int i = i0; i <= i1; ++i) {
            const auto k = static_cast<std::size_t>(j) * n_ + i;
            if (inside(positions_[k], spec, radius)) {
                pts.push_back({positions_[k], 0.0, k});
            }
        }
    }
    normalize_region(pts, spec);
    return pts;
}

CovMatrix ChannelGrid::discrete_ccm(const RegionSpec& spec) const { return weighted_outer_sum(channels_, region(spec)); }

// ---- packing ------------------------------------------------------------------

void require_hermitian(const CovMatrix& r, const char* what) {
    if (r.rows() != r.cols() || r.rows() == 0) {
        throw DomainError(std::string(what) + ": matrix must be square and non-empty");
    }
    const double scale = std::max(1.0, r.cwiseAbs().maxCoeff());
    if ((r - r.adjoint()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw DomainError(std::string(what) + ": matrix is not Hermitian");
    }
}

PackedCov pack_cov(const CovMatrix& r) {
    require_hermitian(r, "pack_cov");
    const auto n = r.rows();
    PackedCov v(n * n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
            v[j * n + i] = i >= j ? r(i, j).real() : r(i, j).imag();
        }
    }
    return v;
}

CovMatrix unpack_cov(const PackedCov& v) {
    const auto n = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(v.size()))));
    if (n == 0 || n * n != v.size()) {
        throw DomainError("packed covariance length " + std::to_string(v.size()) + " is not a perfect square");
    }
    CovMatrix r(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        r(j, j) = cplx(v[j * n + j], 0.0);
        for (Eigen::Index i = j + 1; i < n; ++i) {
            // lower (i > j): real part at (i, j), imaginary part stored above at (j, i)
            const cplx lower(v[j * n + i], -v[i * n + j]);
            r(i, j) = lower;
            r(j, i) = std::conj(lower);
        }
    }
    return r;
}

CovMatrix psd_repair(const CovMatrix& r) {
    require_hermitian(r, "psd_repair");
    const auto n = r.rows();
    Eigen::SelfAdjointEigenSolver<CovMatrix> eig(r);
    if (eig.info() != Eigen::Success) {
        throw NumericalError("psd_repair: eigendecomposition failed");
    }
    Eigen::VectorXd lambda = eig.eigenvalues();
    const double tol = 1e-12 * std::abs(r.trace().real()) / static_cast<double>(n);
    if (lambda.minCoeff() >= 0.0) {
        return r;
    }

    double floor = std::numeric_limits<double>::infinity();
    for (double l : lambda) {
        if (l >= -tol) {
            floor = std::min(floor, std::max(l, 0.0));
        }
    }
    if (!std::isfinite(floor)) {
        floor = 0.0;
    }
    for (auto& l : lambda) {
        if (l < -tol) {
            l = floor;
        } else if (l < 0.0) {
            l = 0.0;
        }
    }
    const auto& v = eig.eigenvectors();
    CovMatrix out = v * lambda.asDiagonal() * v.adjoint();
    return (out + out.adjoint().eval()) / 2.0;
}

double trace_coefficient(std::span<const CovMatrix> labels) {
    if (labels.empty()) {
        throw DomainError("label_scale needs at least one label");
    }
    double total = 0.0;
    for (const auto& r : labels) {
        total += r.trace().real();
    }
    if (!(total > 0.0)) {
        throw DomainError("labels have zero total trace");
    }
    return total / (static_cast<double>(labels.front().rows()) * static_cast<double>(labels.size()));
}

ScaledLabels label_scale(std::span<const CovMatrix> labels) {
    ScaledLabels out;
    out.coefficient = trace_coefficient(labels);
    out.labels.reserve(labels.size());
    for (const auto& r : labels) {
        out.labels.push_back(r / out.coefficient);
    }
    return out;
}

} // namespace ccm
