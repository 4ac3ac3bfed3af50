// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ccmlab/config.hpp"
#include "ccmlab/errors.hpp"

using namespace ccm;
namespace fs = std::filesystem;

namespace {

nlohmann::json as_json(const RunConfig& c) {
    nlohmann::json j;
    to_json(j, c);
    return j;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("ccm_config_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("defaults") {
    const RunConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.array.antennas() == 12);
    CHECK(c.m_p == 60);
    CHECK(c.sizes.error_samples == 9000);
    CHECK(c.sizes.error_draws == 20);
    CHECK(c.n_trajectories == 20);
    CHECK(c.n_coct == 10);
    CHECK(c.speeds.lo == 2.0);
    CHECK(c.speeds.hi == 10.0);
    CHECK(c.timing.t_co == doctest::Approx(0.255));
    CHECK(c.experiment().methods.size() == 7);
}

TEST_CASE("round trip") {
    RunConfig c;
    c.seed = 99;
    c.sigma_c = 0.5;
    c.mode = TrajectoryMode::dynamic;
    c.feedback = FeedbackVariant::channel;
    c.methods = {Method::ls, Method::perfect};
    c.snr_db = {-5.0, 12.5};
    c.train_fractions = {0.1, 1.0};
    c.lenet_training.epochs = 3;
    c.sizes.grid_points_per_side = 40;

    const fs::path dir = scratch_dir("roundtrip");
    save_run_config(c, (dir / "c.json").string());
    const RunConfig back = load_run_config((dir / "c.json").string());
    CHECK(as_json(back) == as_json(c));
    CHECK(back.methods == c.methods);
    CHECK(back.feedback == FeedbackVariant::channel);
    CHECK(parse_run_config(as_json(c).dump()).seed == 99);
    fs::remove_all(dir);
}

TEST_CASE("partial documents keep defaults") {
    const RunConfig c = parse_run_config(R"({"seed": 5, "noise": {"sigma_c": 1.0}})");
    CHECK(c.seed == 5);
    CHECK(c.sigma_c == 1.0);
    CHECK(c.sigma_v == 0.0);
    CHECK(c.m_p == 60);
    CHECK(c.lcnet_training.epochs == RunConfig{}.lcnet_training.epochs);
}

TEST_CASE("rejections") {
    CHECK_THROWS_AS(parse_run_config(R"({"sed": 5})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"noise": {"sigma": 1}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"noise": {"sigma_c": -1}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"m_p": 0})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"m_p": "sixty"})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"experiment": {"mode": "zigzag"}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"training": {"fractions": [0.5, 1.5]}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"speed_range": [5, 2]})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{not json"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"schema": 2})"), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/ccm.json"), ConfigError);
}

TEST_CASE("scene files resolve against the config directory") {
    const fs::path dir = scratch_dir("scene");
    fs::create_directories(dir / "scenes");
    {
        nlohmann::json s;
        Scene sc = default_scene();
        to_json(s, sc);
        std::ofstream(dir / "scenes" / "room.json") << s.dump();
    }
    std::ofstream(dir / "run.json") << R"({"scene_file": "scenes/room.json"})";
    const RunConfig c = load_run_config((dir / "run.json").string());
    REQUIRE(c.scene_file.has_value());
    CHECK(fs::path(*c.scene_file).is_absolute());
    CHECK(fs::equivalent(*c.scene_file, dir / "scenes" / "room.json"));
    CHECK(c.scene().plane_bounds == default_scene().plane_bounds);
    fs::remove_all(dir);
}
