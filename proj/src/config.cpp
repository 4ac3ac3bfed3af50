// SPDX-License-Identifier: Apache-2.0
#include "ccmlab/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ccmlab/errors.hpp"

namespace ccm {

using nlohmann::json;

nn::TrainConfig TrainSettings::to_train_config(std::uint64_t seed) const {
    nn::TrainConfig c;
    c.learning_rate = learning_rate;
    c.batch_size = batch_size;
    c.epochs = epochs;
    c.plateau_patience = plateau_patience;
    c.seed = seed;
    return c;
}

void RunConfig::validate() const {
    array.validate();
    timing.validate();
    if (scene_file && !std::filesystem::exists(*scene_file)) {
        throw ConfigError("scene file not found: " + *scene_file);
    }
    const DatasetSizes& s = sizes;
    for (int v : {s.grid_points_per_side, s.lcnet_train_locations, s.lcnet_train_speeds, s.lcnet_test_locations,
                  s.lcnet_test_speeds, s.lenet_train_samples, s.error_samples, s.error_draws}) {
        if (v < 1) {
            throw ConfigError("dataset sizes must be positive");
        }
    }
    if (s.grid_points_per_side < 2) {
        throw ConfigError("grid needs at least 2 points per side");
    }
    if (!(lenet_noise_ratio >= 0.0)) {
        throw ConfigError("lenet_noise_ratio must be nonnegative");
    }
    for (const TrainSettings* t : {&lcnet_training, &lenet_training}) {
        t->to_train_config(seed).validate();
    }
    for (double f : train_fractions) {
        if (!(f > 0.0 && f <= 1.0)) {
            throw ConfigError("training fractions must lie in (0, 1]");
        }
    }
    if (output_dir.empty()) {
        throw ConfigError("output directory must be set");
    }
    experiment().validate();
}

Scene RunConfig::scene() const { return scene_file ? load_scene(*scene_file) : default_scene(); }

ExperimentConfig RunConfig::experiment() const {
    ExperimentConfig e;
    e.array = array;
    e.scene = scene();
    e.timing = timing;
    e.mode = mode;
    e.speeds = speeds;
    e.n_trajectories = n_trajectories;
    e.n_coct = n_coct;
    e.sigma_a = sigma_a;
    e.sigma_c = sigma_c;
    e.sigma_v = sigma_v;
    e.snr_db = snr_db;
    e.m_p = m_p;
    e.noise_std = pilot_noise_std;
    e.feedback = feedback;
    e.methods = methods;
    e.seed = seed;
    return e;
}

namespace {

json train_json(const TrainSettings& t) {
    return {{"learning_rate", t.learning_rate},
            {"batch_size", t.batch_size},
            {"epochs", t.epochs},
            {"plateau_patience", t.plateau_patience}};
}

void check_keys(const json& j, std::initializer_list<const char*> keys, const char* where) {
    if (!j.is_object()) {
        throw ConfigError(std::string(where) + " must be a JSON object");
    }
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items()) {
        if (!allowed.contains(k)) {
            throw ConfigError(std::string("unknown key '") + k + "' in " + where);
        }
    }
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

TrainSettings train_from(const json& j, TrainSettings t, const char* where) {
    check_keys(j, {"learning_rate", "batch_size", "epochs", "plateau_patience"}, where);
    read(j, "learning_rate", t.learning_rate);
    read(j, "batch_size", t.batch_size);
    read(j, "epochs", t.epochs);
    read(j, "plateau_patience", t.plateau_patience);
    return t;
}

} // namespace

void to_json(json& j, const RunConfig& c) {
    std::vector<std::string> methods;
    for (Method m : c.methods) {
        methods.emplace_back(to_string(m));
    }
    j = json{
        {"schema", 1},
        {"scene_file", c.scene_file ? json(*c.scene_file) : json(nullptr)},
        {"array", {{"n_ele", c.array.n_ele}, {"n_az", c.array.n_az}, {"spacing_ratio", c.array.spacing_ratio}}},
        {"timing", {{"t_co", c.timing.t_co}, {"t_c", c.timing.t_c}, {"t_o", c.timing.t_o}, {"n_cct", c.timing.n_cct}}},
        {"speed_range", {c.speeds.lo, c.speeds.hi}},
        {"noise",
         {{"sigma_c", c.sigma_c},
          {"sigma_v", c.sigma_v},
          {"lenet_noise_ratio", c.lenet_noise_ratio},
          {"pilot_noise_std", c.pilot_noise_std},
          {"snr_db", c.snr_db}}},
        {"m_p", c.m_p},
        {"dataset",
         {{"grid_points_per_side", c.sizes.grid_points_per_side},
          {"lcnet_train_locations", c.sizes.lcnet_train_locations},
          {"lcnet_train_speeds", c.sizes.lcnet_train_speeds},
          {"lcnet_test_locations", c.sizes.lcnet_test_locations},
          {"lcnet_test_speeds", c.sizes.lcnet_test_speeds},
          {"lenet_train_samples", c.sizes.lenet_train_samples},
          {"error_samples", c.sizes.error_samples},
          {"error_draws", c.sizes.error_draws}}},
        {"training",
         {{"lcnet", train_json(c.lcnet_training)},
          {"lenet", train_json(c.lenet_training)},
          {"fractions", c.train_fractions}}},
        {"experiment",
         {{"trajectories", c.n_trajectories},
          {"cocts", c.n_coct},
          {"mode", to_string(c.mode)},
          {"sigma_a", c.sigma_a},
          {"feedback", c.feedback == FeedbackVariant::location ? "location" : "channel"},
          {"methods", methods}}},
        {"seed", c.seed},
        {"output_dir", c.output_dir},
    };
}

void from_json(const json& j, RunConfig& c) {
    check_keys(j,
               {"schema", "scene_file", "array", "timing", "speed_range", "noise", "m_p", "dataset", "training",
                "experiment", "seed", "output_dir"},
               "config");
    if (j.contains("schema") && j.at("schema").get<int>() != 1) {
        throw ConfigError("unsupported config schema");
    }
    if (j.contains("scene_file")) {
        const json& s = j.at("scene_file");
        c.scene_file = s.is_null() ? std::nullopt : std::optional<std::string>(s.get<std::string>());
    }
    if (j.contains("array")) {
        const json& a = j.at("array");
        check_keys(a, {"n_ele", "n_az", "spacing_ratio"}, "array");
        read(a, "n_ele", c.array.n_ele);
        read(a, "n_az", c.array.n_az);
        read(a, "spacing_ratio", c.array.spacing_ratio);
    }
    if (j.contains("timing")) {
        const json& t = j.at("timing");
        check_keys(t, {"t_co", "t_c", "t_o", "n_cct"}, "timing");
        read(t, "t_c", c.timing.t_c);
        read(t, "t_o", c.timing.t_o);
        read(t, "n_cct", c.timing.n_cct);
        c.timing.t_co = c.timing.t_o + c.timing.n_cct * c.timing.t_c;
        read(t, "t_co", c.timing.t_co);
    }
    if (j.contains("speed_range")) {
        const auto v = j.at("speed_range").get<std::vector<double>>();
        if (v.size() != 2) {
            throw ConfigError("speed_range must be [v_L, v_U]");
        }
        c.speeds = {v[0], v[1]};
    }
    if (j.contains("noise")) {
        const json& n = j.at("noise");
        check_keys(n, {"sigma_c", "sigma_v", "lenet_noise_ratio", "pilot_noise_std", "snr_db"}, "noise");
        read(n, "sigma_c", c.sigma_c);
        read(n, "sigma_v", c.sigma_v);
        read(n, "lenet_noise_ratio", c.lenet_noise_ratio);
        read(n, "pilot_noise_std", c.pilot_noise_std);
        read(n, "snr_db", c.snr_db);
    }
    read(j, "m_p", c.m_p);
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        check_keys(d,
                   {"grid_points_per_side", "lcnet_train_locations", "lcnet_train_speeds", "lcnet_test_locations",
                    "lcnet_test_speeds", "lenet_train_samples", "error_samples", "error_draws"},
                   "dataset");
        read(d, "grid_points_per_side", c.sizes.grid_points_per_side);
        read(d, "lcnet_train_locations", c.sizes.lcnet_train_locations);
        read(d, "lcnet_train_speeds", c.sizes.lcnet_train_speeds);
        read(d, "lcnet_test_locations", c.sizes.lcnet_test_locations);
        read(d, "lcnet_test_speeds", c.sizes.lcnet_test_speeds);
        read(d, "lenet_train_samples", c.sizes.lenet_train_samples);
        read(d, "error_samples", c.sizes.error_samples);
        read(d, "error_draws", c.sizes.error_draws);
    }
    if (j.contains("training")) {
        const json& t = j.at("training");
        check_keys(t, {"lcnet", "lenet", "fractions"}, "training");
        if (t.contains("lcnet")) {
            c.lcnet_training = train_from(t.at("lcnet"), c.lcnet_training, "training.lcnet");
        }
        if (t.contains("lenet")) {
            c.lenet_training = train_from(t.at("lenet"), c.lenet_training, "training.lenet");
        }
        read(t, "fractions", c.train_fractions);
    }
    if (j.contains("experiment")) {
        const json& e = j.at("experiment");
        check_keys(e, {"trajectories", "cocts", "mode", "sigma_a", "feedback", "methods"}, "experiment");
        read(e, "trajectories", c.n_trajectories);
        read(e, "cocts", c.n_coct);
        if (e.contains("mode")) {
            c.mode = parse_trajectory_mode(e.at("mode").get<std::string>());
        }
        read(e, "sigma_a", c.sigma_a);
        if (e.contains("feedback")) {
            const auto f = e.at("feedback").get<std::string>();
            if (f == "location") {
                c.feedback = FeedbackVariant::location;
            } else if (f == "channel") {
                c.feedback = FeedbackVariant::channel;
            } else {
                throw ConfigError("feedback must be 'location' or 'channel'");
            }
        }
        if (e.contains("methods")) {
            c.methods.clear();
            for (const auto& m : e.at("methods")) {
                c.methods.push_back(parse_method(m.get<std::string>()));
            }
        }
    }
    read(j, "seed", c.seed);
    read(j, "output_dir", c.output_dir);
}

namespace {

RunConfig parse_unchecked(const std::string& text) {
    try {
        RunConfig c;
        from_json(json::parse(text), c);
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
}

} // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig c = parse_unchecked(text);
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig c = parse_unchecked(ss.str());
    // Relative scene paths are resolved against the config's directory.
    if (c.scene_file && std::filesystem::path(*c.scene_file).is_relative()) {
        c.scene_file = std::filesystem::absolute(std::filesystem::path(path).parent_path() / *c.scene_file).lexically_normal().string();
    }
    c.validate();
    return c;
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write config to " + path);
    }
    out << json(cfg).dump(2) << '\n';
}

} // namespace ccm
