// SPDX-License-Identifier: Apache-2.0
#include "ccmlab/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

#include "ccmlab/errors.hpp"

namespace ccm {

namespace {

constexpr double kParallelTol = 1e-12;

PathComponent departure(const Eigen::Vector3d& from, const Eigen::Vector3d& to, cplx gain) {
    const Eigen::Vector3d d = to - from;
    const double r = d.norm();
    PathComponent path;
    path.gain = gain;
    path.elevation = std::acos(std::clamp(d.z() / r, -1.0, 1.0));
    path.azimuth = std::atan2(d.y(), d.x());
    return path;
}

// True when the open segment a->b crosses the wall rectangle.
bool blocks(const Reflector& wall, const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    const double da = wall.signed_distance(a);
    const double db = wall.signed_distance(b);
    if (std::abs(da - db) < kParallelTol) {
        return false;
    }
    const double s = da / (da - db);
    if (!(s > 0.0 && s < 1.0)) {
        return false;
    }
    return wall.covers(a + s * (b - a));
}

} // namespace

Position Bounds::clamp(const Position& p) const {
    return {std::clamp(p.x(), x_min, x_max), std::clamp(p.y(), y_min, y_max)};
}

bool Reflector::covers(const Eigen::Vector3d& on_plane) const {
    const Eigen::Vector3d rel = on_plane - anchor;
    if (width && std::abs(rel.dot(tangent())) > *width / 2.0) {
        return false;
    }
    if (height && (rel.z() < 0.0 || rel.z() > *height)) {
        return false;
    }
    return true;
}

void Scene::validate() const {
    if (!(plane_bounds.x_max > plane_bounds.x_min) || !(plane_bounds.y_max > plane_bounds.y_min)) {
        throw ConfigError("scene plane bounds are degenerate");
    }
    if (std::abs(bs_position.z() - plane_height) < 1e-9) {
        throw ConfigError("BS must not lie on the coverage plane");
    }
    if (!(pathloss_exponent >= 2.0)) {
        throw ConfigError("pathloss exponent must be >= 2");
    }
    for (const auto& r : reflectors) {
        if (std::abs(r.normal.norm() - 1.0) > 1e-9) {
            throw ConfigError("reflector normal must have unit length");
        }
        if (std::abs(r.normal.z()) > 1e-9) {
            throw ConfigError("reflectors must be vertical (normal with zero z component)");
        }
        if (std::abs(r.coefficient) > 1.0 + 1e-12) {
            throw ConfigError("reflection coefficient magnitude exceeds 1");
        }
        if ((r.width && !(*r.width > 0.0)) || (r.height && !(*r.height > 0.0))) {
            throw ConfigError("reflector extent must be positive");
        }
    }
}

Scene default_scene() {
    Scene s;
    auto wall = [](Eigen::Vector3d anchor, Eigen::Vector3d normal, double width, double height, cplx coef) {
        Reflector r;
        r.anchor = anchor;
        r.normal = normal.normalized();
        r.width = width;
        r.height = height;
        r.coefficient = coef;
        return r;
    };
    // building faces north and east of the area, a partial wall to the west
    // and a short kiosk wall standing inside the area
    s.reflectors.push_back(wall({15.0, 36.0, 0.0}, {0.0, -1.0, 0.0}, 50.0, 25.0, std::polar(0.6, 2.1)));
    s.reflectors.push_back(wall({37.0, 12.0, 0.0}, {-1.0, 0.0, 0.0}, 44.0, 18.0, std::polar(0.5, -0.8)));
    s.reflectors.push_back(wall({-6.0, 24.0, 0.0}, {1.0, 0.0, 0.0}, 16.0, 12.0, std::polar(0.45, 0.4)));
    s.reflectors.push_back(wall({21.0, 8.0, 0.0}, {-1.0, 1.0, 0.0}, 5.0, 3.0, std::polar(0.7, -2.5)));
    return s;
}

std::vector<PathComponent> trace_paths(const Scene& scene, const Position& pos) {
    if (!scene.plane_bounds.contains(pos)) {
        throw DomainError("user position (" + std::to_string(pos.x()) + ", " + std::to_string(pos.y()) +
                          ") outside the coverage plane");
    }
    const Eigen::Vector3d bs = scene.bs_position;
    const Eigen::Vector3d user = scene.lift(pos);
    const double half_exp = scene.pathloss_exponent / 2.0;

    std::vector<PathComponent> paths;
    paths.reserve(scene.reflectors.size() + 1);

    const bool los_blocked = std::any_of(scene.reflectors.begin(), scene.reflectors.end(),
                                         [&](const Reflector& r) { return blocks(r, bs, user); });
    if (!los_blocked) {
        const double len = (user - bs).norm();
        paths.push_back(departure(bs, user, scene.reference_gain / std::pow(len, half_exp)));
    }

    for (const auto& wall : scene.reflectors) {
        const double d_bs = wall.signed_distance(bs);
        const double d_user = wall.signed_distance(user);
        // specular reflection needs both ends strictly on the same side
        if (d_bs * d_user <= 0.0) {
            continue;
        }
        const Eigen::Vector3d image = bs - 2.0 * d_bs * wall.normal;
        const double s = -d_bs / (-d_bs - d_user);
        const Eigen::Vector3d hit = image + s * (user - image);
        if (!wall.covers(hit)) {
            continue;
        }
        const double len = (user - image).norm();
        paths.push_back(departure(bs, hit, scene.reference_gain * wall.coefficient / std::pow(len, half_exp)));
    }
    return paths;
}

Channel channel_map(const ArrayConfig& cfg, const Scene& scene, const Position& pos) {
    const auto paths = trace_paths(scene, pos);
    if (paths.empty()) {
        throw DomainError("no propagation path reaches (" + std::to_string(pos.x()) + ", " +
                          std::to_string(pos.y()) + ")");
    }
    return synthesize_channel(cfg, paths);
}

double mean_channel_norm(const ArrayConfig& cfg, const Scene& scene, std::span<const Position> positions) {
    if (positions.empty()) {
        throw DomainError("mean channel norm needs at least one position");
    }
    double sum = 0.0;
    for (const auto& p : positions) {
        sum += channel_map(cfg, scene, p).norm();
    }
    return sum / static_cast<double>(positions.size());
}

// ---- JSON -------------------------------------------------------------------

namespace {

nlohmann::json vec3(const Eigen::Vector3d& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) {
        throw ConfigError("expected a 3-element coordinate array");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::json complex_json(cplx c) { return nlohmann::json::array({c.real(), c.imag()}); }

cplx complex_json(const nlohmann::json& j) {
    if (j.is_number()) {
        return {j.get<double>(), 0.0};
    }
    if (!j.is_array() || j.size() != 2) {
        throw ConfigError("expected a complex number as [re, im]");
    }
    return {j[0].get<double>(), j[1].get<double>()};
}

nlohmann::json extent(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> extent(const nlohmann::json& j) {
    if (j.is_null()) {
        return std::nullopt;
    }
    return j.get<double>();
}

} // namespace

void to_json(nlohmann::json& j, const Scene& scene) {
    j = nlohmann::json::object();
    j["schema"] = 1;
    j["bs_position"] = vec3(scene.bs_position);
    j["plane_height"] = scene.plane_height;
    j["plane_bounds"] = {{"x_min", scene.plane_bounds.x_min},
                         {"x_max", scene.plane_bounds.x_max},
                         {"y_min", scene.plane_bounds.y_min},
                         {"y_max", scene.plane_bounds.y_max}};
    auto walls = nlohmann::json::array();
    for (const auto& r : scene.reflectors) {
        walls.push_back({{"anchor", vec3(r.anchor)},
                         {"normal", vec3(r.normal)},
                         {"width", extent(r.width)},
                         {"height", extent(r.height)},
                         {"coefficient", complex_json(r.coefficient)}});
    }
    j["reflectors"] = walls;
    j["pathloss_exponent"] = scene.pathloss_exponent;
    j["reference_gain"] = complex_json(scene.reference_gain);
}

void from_json(const nlohmann::json& j, Scene& scene) {
    try {
        if (j.value("schema", 0) != 1) {
            throw ConfigError("unsupported scene schema (expected \"schema\": 1)");
        }
        Scene s;
        s.bs_position = vec3(j.at("bs_position"));
        s.plane_height = j.at("plane_height").get<double>();
        const auto& b = j.at("plane_bounds");
        s.plane_bounds = {b.at("x_min").get<double>(), b.at("x_max").get<double>(), b.at("y_min").get<double>(),
                          b.at("y_max").get<double>()};
        for (const auto& w : j.at("reflectors")) {
            Reflector r;
            r.anchor = vec3(w.at("anchor"));
            r.normal = vec3(w.at("normal"));
            r.width = extent(w.value("width", nlohmann::json(nullptr)));
            r.height = extent(w.value("height", nlohmann::json(nullptr)));
            r.coefficient = complex_json(w.at("coefficient"));
            s.reflectors.push_back(r);
        }
        s.pathloss_exponent = j.value("pathloss_exponent", 2.0);
        s.reference_gain = j.contains("reference_gain") ? complex_json(j["reference_gain"]) : cplx{1.0, 0.0};
        s.validate();
        scene = std::move(s);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed scene description: ") + e.what());
    }
}

Scene load_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open scene file " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("scene file " + path + " is not valid JSON: " + e.what());
    }
    return j.get<Scene>();
}

void save_scene(const Scene& scene, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write scene file " + path);
    }
    out << nlohmann::json(scene).dump(2) << '\n';
}

} // namespace ccm
