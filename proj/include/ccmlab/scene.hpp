// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "ccmlab/geometry.hpp"

namespace ccm {

/// Plane coordinates of the user on the coverage plane, meters.
using Position = Eigen::Vector2d;

struct Bounds {
    double x_min = 0.0;
    double x_max = 30.0;
    double y_min = 0.0;
    double y_max = 30.0;

    bool contains(const Position& p) const {
        return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max;
    }
    Position clamp(const Position& p) const;
    Position centroid() const { return {(x_min + x_max) / 2.0, (y_min + y_max) / 2.0}; }
    double width() const { return x_max - x_min; }
    double depth() const { return y_max - y_min; }

    bool operator==(const Bounds&) const = default;
};

/// Vertical rectangular reflector. The wall runs along the horizontal tangent
/// (-n_y, n_x, 0) centered on the anchor and rises from anchor.z by height.
/// An empty width or height means the wall is unbounded in that direction.
struct Reflector {
    Eigen::Vector3d anchor = Eigen::Vector3d::Zero();
    Eigen::Vector3d normal = Eigen::Vector3d::UnitX();
    std::optional<double> width;
    std::optional<double> height;
    cplx coefficient{-0.5, 0.0};

    Eigen::Vector3d tangent() const { return {-normal.y(), normal.x(), 0.0}; }
    /// Signed distance of a point from the wall plane along the normal.
    double signed_distance(const Eigen::Vector3d& p) const { return (p - anchor).dot(normal); }
    /// True when a point on the wall plane lies inside the wall rectangle.
    bool covers(const Eigen::Vector3d& on_plane) const;

    bool operator==(const Reflector&) const = default;
};

struct Scene {
    Eigen::Vector3d bs_position{-25.0, -30.0, 10.0};
    double plane_height = 1.5;
    Bounds plane_bounds;
    std::vector<Reflector> reflectors;
    double pathloss_exponent = 2.0;
    cplx reference_gain{1.0, 0.0};

    /// Throws ConfigError when an invariant is violated.
    void validate() const;
    Eigen::Vector3d lift(const Position& p) const { return {p.x(), p.y(), plane_height}; }

    bool operator==(const Scene&) const = default;
};

/// 30 m x 30 m coverage plane at 1.5 m, BS at (-25, -30, 10) in the plane's
/// local frame, and four reflecting walls.
Scene default_scene();

/// LOS path (unless blocked by a reflector) plus one first-order specular
/// reflection per reflector whose mirror point lies on the wall.
std::vector<PathComponent> trace_paths(const Scene& scene, const Position& pos);

/// Ground-truth location -> channel mapping.
Channel channel_map(const ArrayConfig& cfg, const Scene& scene, const Position& pos);

/// Average channel 2-norm over the given positions.
double mean_channel_norm(const ArrayConfig& cfg, const Scene& scene, std::span<const Position> positions);

void to_json(nlohmann::json& j, const Scene& scene);
void from_json(const nlohmann::json& j, Scene& scene);

Scene load_scene(const std::string& path);
void save_scene(const Scene& scene, const std::string& path);

} // namespace ccm
