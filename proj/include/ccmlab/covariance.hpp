// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ccmlab/geometry.hpp"
#include "ccmlab/scene.hpp"
#include "ccmlab/timing.hpp"

namespace ccm {

/// Channel covariance matrix (Hermitian, N_B x N_B).
using CovMatrix = Eigen::MatrixXcd;

/// Real packing of a Hermitian matrix: real parts on/below the diagonal,
/// imaginary parts strictly above, vectorized column-major (length N_B^2).
using PackedCov = Eigen::VectorXd;

/// Moving region of one COCT: disc(s) around the reported start location.
struct RegionSpec {
    Position center = Position::Zero();
    double speed = 0.0; ///< m/s
    FrameTiming timing;
};

struct WeightedPoint {
    Position position;
    double probability = 0.0;
    std::size_t index = 0; ///< index into the grid the point was taken from
};

/// Radial density of the user position over the COCT: the average of the
/// uniform-disc densities of radius speed * T_q, q = 1..N.
double region_weight(double rho, const RegionSpec& spec);

/// Grid points inside the outermost disc with normalized region weights.
/// Throws DomainError when no grid point falls inside the region.
std::vector<WeightedPoint> region_points(const RegionSpec& spec, std::span<const Position> grid);

/// Discrete CCM sum_s P_s M(x_s) M(x_s)^H over the region points of the grid.
CovMatrix discrete_ccm(const ArrayConfig& cfg, const Scene& scene, const RegionSpec& spec,
                       std::span<const Position> grid);

/// Uniform lattice over the coverage plane with its channels precomputed.
class ChannelGrid {
public:
    /// points_per_side^2 lattice points including the plane corners.
    ChannelGrid(const ArrayConfig& cfg, const Scene& scene, int points_per_side);

    std::span<const Position> positions() const { return positions_; }
    const Eigen::MatrixXcd& channels() const { return channels_; }
    Channel channel(std::size_t i) const { return channels_.col(static_cast<Eigen::Index>(i)); }
    std::size_t size() const { return positions_.size(); }
    double spacing_x() const { return dx_; }
    double spacing_y() const { return dy_; }

    /// Region points, restricted to the lattice window around the center.
    /// Same points, order and probabilities as region_points() over positions().
    std::vector<WeightedPoint> region(const RegionSpec& spec) const;

    /// Same as discrete_ccm() over positions(), using the cached channels.
    CovMatrix discrete_ccm(const RegionSpec& spec) const;

    /// Binary cache: a text header with a fingerprint of (array, scene, size),
    /// then the channel matrix as little-endian doubles.
    void save(const std::string& path) const;
    /// Returns nullopt when the file is missing or was built for another setup.
    static std::optional<ChannelGrid> load(const std::string& path, const ArrayConfig& cfg, const Scene& scene,
                                           int points_per_side);
    static std::uint64_t fingerprint(const ArrayConfig& cfg, const Scene& scene, int points_per_side);

private:
    ChannelGrid(const Bounds& bounds, int points_per_side);

    int n_ = 0;
    std::uint64_t fingerprint_ = 0;
    Bounds bounds_;
    double dx_ = 0.0;
    double dy_ = 0.0;
    std::vector<Position> positions_;
    Eigen::MatrixXcd channels_;
};

/// Accumulate sum_s w_s h_s h_s^H into an exactly Hermitian matrix.
CovMatrix weighted_outer_sum(const Eigen::MatrixXcd& channels, std::span<const WeightedPoint> points);

PackedCov pack_cov(const CovMatrix& r);
CovMatrix unpack_cov(const PackedCov& v);

/// Replace negative eigenvalues with the smallest nonnegative one (0 if none).
CovMatrix psd_repair(const CovMatrix& r);

/// Throws DomainError unless r is square and Hermitian to a relative 1e-12.
void require_hermitian(const CovMatrix& r, const char* what);

struct ScaledLabels {
    std::vector<CovMatrix> labels;
    double coefficient = 1.0; ///< multiply network outputs by this to undo the scaling
};

/// Scale labels so their mean trace is N_B; coefficient = sum tr / (N_B * S).
ScaledLabels label_scale(std::span<const CovMatrix> labels);

/// sum tr(R_i) / (N_B * S)
double trace_coefficient(std::span<const CovMatrix> labels);

} // namespace ccm
