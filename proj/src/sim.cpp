// SPDX-License-Identifier: Apache-2.0
#include "ccmlab/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include "ccmlab/errors.hpp"
#include "ccmlab/estimator.hpp"
#include "ccmlab/random.hpp"
#include "ccmlab/textio.hpp"

namespace ccm {

const char* to_string(TrajectoryMode m) { return m == TrajectoryMode::constant ? "constant" : "dynamic"; }

TrajectoryMode parse_trajectory_mode(const std::string& s) {
    if (s == "constant") {
        return TrajectoryMode::constant;
    }
    if (s == "dynamic") {
        return TrajectoryMode::dynamic;
    }
    throw ConfigError("unknown trajectory mode '" + s + "' (expected constant or dynamic)");
}

Position advance(const Position& from, double& heading, double distance, const Bounds& b) {
    Position p = from;
    Eigen::Vector2d d(std::cos(heading), std::sin(heading));
    // Each pass either finishes the leg or hits an edge; corners flip both components.
    for (int pass = 0; distance > 0.0 && pass < 64; ++pass) {
        const double inf = std::numeric_limits<double>::infinity();
        double tx = inf;
        double ty = inf;
        if (d.x() > 0.0) {
            tx = (b.x_max - p.x()) / d.x();
        } else if (d.x() < 0.0) {
            tx = (b.x_min - p.x()) / d.x();
        }
        if (d.y() > 0.0) {
            ty = (b.y_max - p.y()) / d.y();
        } else if (d.y() < 0.0) {
            ty = (b.y_min - p.y()) / d.y();
        }
        tx = std::max(tx, 0.0);
        ty = std::max(ty, 0.0);
        const double step = std::min({distance, tx, ty});
        p += step * d;
        distance -= step;
        if (distance > 0.0) {
            if (tx <= step) {
                d.x() = -d.x();
            }
            if (ty <= step) {
                d.y() = -d.y();
            }
        }
    }
    heading = std::atan2(d.y(), d.x());
    return b.clamp(p);
}

namespace {

double truncated_turn(Rng& rng, double sigma_a) {
    for (;;) {
        const double a = rng.normal(0.0, sigma_a);
        if (a > -std::numbers::pi && a < std::numbers::pi) {
            return a;
        }
    }
}

} // namespace

Trajectory gen_trajectory(TrajectoryMode mode, const FrameTiming& timing, const Bounds& bounds, SpeedRange speeds,
                          int n_coct, std::uint64_t seed, double sigma_a) {
    timing.validate();
    if (!(speeds.lo > 0.0) || !(speeds.hi >= speeds.lo) || !std::isfinite(speeds.hi)) {
        throw DomainError("speed range must satisfy 0 < v_L <= v_U < inf");
    }
    if (!(bounds.width() > 0.0) || !(bounds.depth() > 0.0)) {
        throw DomainError("trajectory bounds are degenerate");
    }
    if (n_coct < 0) {
        throw DomainError("number of COCTs must be nonnegative");
    }
    if (mode == TrajectoryMode::dynamic && !(sigma_a > 0.0)) {
        throw DomainError("sigma_a must be positive");
    }
    Rng rng(seed);
    Trajectory tr;
    tr.mode = mode;
    Position pos(rng.uniform(bounds.x_min, bounds.x_max), rng.uniform(bounds.y_min, bounds.y_max));
    const double tail = timing.t_co - timing.horizon();
    for (int k = 0; k < n_coct; ++k) {
        CoctRecord rec;
        rec.start = pos;
        rec.speed = rng.uniform(speeds.lo, speeds.hi);
        double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
        rec.cct.reserve(static_cast<std::size_t>(timing.n_cct));
        for (int q = 1; q <= timing.n_cct + 1; ++q) {
            const double dt = q == 1 ? timing.t_o : (q <= timing.n_cct ? timing.t_c : tail);
            if (q > 1 && mode == TrajectoryMode::dynamic) {
                const double turn = truncated_turn(rng, sigma_a);
                rec.heading_changes.push_back(turn);
                heading += turn;
            }
            pos = advance(pos, heading, rec.speed * dt, bounds);
            if (q <= timing.n_cct) {
                rec.cct.push_back(pos);
            }
        }
        rec.end = pos;
        tr.cocts.push_back(std::move(rec));
    }
    return tr;
}

CovMatrix statistical_ccm(const std::optional<std::span<const Channel>>& prev, double fallback_scale,
                          int n_antennas) {
    if (!prev) {
        if (n_antennas < 1) {
            throw DomainError("antenna count must be positive");
        }
        return CovMatrix::Identity(n_antennas, n_antennas) * fallback_scale;
    }
    if (prev->empty()) {
        throw DomainError("statistical CCM needs at least one channel");
    }
    const Eigen::Index n = prev->front().size();
    Eigen::MatrixXcd stacked(n, static_cast<Eigen::Index>(prev->size()));
    for (std::size_t i = 0; i < prev->size(); ++i) {
        if ((*prev)[i].size() != n) {
            throw DomainError("channels differ in length");
        }
        stacked.col(static_cast<Eigen::Index>(i)) = (*prev)[i];
    }
    CovMatrix r = stacked * stacked.adjoint() / static_cast<double>(prev->size());
    return 0.5 * (r + r.adjoint().eval());
}

const char* to_string(Method m) {
    switch (m) {
    case Method::ls: return "ls";
    case Method::identity_lmmse: return "identity-lmmse";
    case Method::statistical: return "statistical";
    case Method::ulccme_raw: return "ulccme-raw";
    case Method::ulccme_denoised: return "ulccme-denoised";
    case Method::ulccme_noiseless: return "ulccme-noiseless";
    case Method::perfect: return "perfect";
    }
    return "?";
}

std::vector<Method> all_methods() {
    return {Method::ls,         Method::identity_lmmse,  Method::statistical, Method::ulccme_raw,
            Method::ulccme_denoised, Method::ulccme_noiseless, Method::perfect};
}

Method parse_method(const std::string& s) {
    for (Method m : all_methods()) {
        if (s == to_string(m)) {
            return m;
        }
    }
    throw ConfigError("unknown method '" + s + "'");
}

void ExperimentConfig::validate() const {
    array.validate();
    scene.validate();
    timing.validate();
    if (!(speeds.lo > 0.0) || !(speeds.hi >= speeds.lo)) {
        throw ConfigError("speed range must satisfy 0 < v_L <= v_U");
    }
    if (n_trajectories < 1 || n_coct < 1 || m_p < 1) {
        throw ConfigError("trajectory count, COCT count and pilot length must be positive");
    }
    if (!(sigma_c >= 0.0) || !(sigma_v >= 0.0) || !(noise_std > 0.0)) {
        throw ConfigError("noise levels must be nonnegative and the pilot noise std positive");
    }
    if (snr_db.empty() || methods.empty()) {
        throw ConfigError("need at least one SNR point and one method");
    }
}

const MethodResult& ExperimentReport::at(Method m, double snr) const {
    for (const auto& r : rows) {
        if (r.method == m && r.snr_db == snr) {
            return r;
        }
    }
    throw DomainError(std::string("no result for ") + to_string(m));
}

namespace {

struct TrajectoryData {
    Trajectory path;
    std::vector<Upload> uploads;
    std::vector<std::vector<Channel>> channels; // per COCT, N true channels
    std::vector<CovMatrix> oracle;              // per COCT, empty without a grid
    std::vector<CovMatrix> perfect;
};

bool uses_learning(Method m) {
    return m == Method::ulccme_raw || m == Method::ulccme_denoised || m == Method::ulccme_noiseless;
}

void check_models(const ExperimentConfig& cfg, const TrainedModels& models) {
    const auto nb = static_cast<Eigen::Index>(cfg.array.antennas());
    if (std::none_of(cfg.methods.begin(), cfg.methods.end(), uses_learning)) {
        return;
    }
    try {
        models.lcnet.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("LCNET model missing or invalid: ") + e.what());
    }
    if (models.lcnet.input_width() != 3 || models.lcnet.output_width() != nb * nb) {
        throw ConfigError("LCNET shape does not match the array configuration");
    }
    if (std::find(cfg.methods.begin(), cfg.methods.end(), Method::ulccme_denoised) != cfg.methods.end()) {
        try {
            models.lenet.validate();
        } catch (const std::exception& e) {
            throw ConfigError(std::string("LENET model missing or invalid: ") + e.what());
        }
        if (models.lenet.input_width() != 2 * nb || models.lenet.output_width() != 2) {
            throw ConfigError("LENET shape does not match the array configuration");
        }
        if (models.stats.samples == 0) {
            throw ConfigError("LENET error statistics are missing");
        }
    }
}

} // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, const TrainedModels& models, const ChannelGrid* grid) {
    cfg.validate();
    check_models(cfg, models);
    const int nb = cfg.array.antennas();
    const Bounds& bounds = cfg.scene.plane_bounds;

    std::vector<TrajectoryData> data(static_cast<std::size_t>(cfg.n_trajectories));
    double power_sum = 0.0;
    std::size_t channel_count = 0;
    for (int m = 0; m < cfg.n_trajectories; ++m) {
        TrajectoryData& d = data[static_cast<std::size_t>(m)];
        const auto tseed = Rng::substream(cfg.seed, "trajectory", static_cast<std::uint64_t>(m)).next_u64();
        d.path = gen_trajectory(cfg.mode, cfg.timing, bounds, cfg.speeds, cfg.n_coct, tseed, cfg.sigma_a);
        Rng up = Rng::substream(cfg.seed, "uploads", static_cast<std::uint64_t>(m));
        for (const CoctRecord& c : d.path.cocts) {
            const double ex = up.normal();
            const double ey = up.normal();
            const double ev = up.normal();
            Upload u;
            u.location = bounds.clamp(c.start + cfg.sigma_c * Position(ex, ey));
            u.speed = std::clamp(c.speed + cfg.sigma_v * ev, cfg.speeds.lo, cfg.speeds.hi);
            d.uploads.push_back(u);

            std::vector<Channel> hs;
            hs.reserve(c.cct.size());
            for (const Position& p : c.cct) {
                hs.push_back(channel_map(cfg.array, cfg.scene, p));
                power_sum += hs.back().squaredNorm();
                ++channel_count;
            }
            Eigen::MatrixXcd stacked(nb, static_cast<Eigen::Index>(hs.size()));
            for (std::size_t q = 0; q < hs.size(); ++q) {
                stacked.col(static_cast<Eigen::Index>(q)) = hs[q];
            }
            CovMatrix perfect = stacked * stacked.adjoint() / static_cast<double>(hs.size());
            d.perfect.push_back(0.5 * (perfect + perfect.adjoint().eval()));
            d.channels.push_back(std::move(hs));
            if (grid != nullptr) {
                d.oracle.push_back(grid->discrete_ccm(RegionSpec{c.start, c.speed, cfg.timing}));
            }
        }
    }
    const double mean_power = power_sum / static_cast<double>(channel_count);
    const double noise_var = cfg.noise_std * cfg.noise_std;
    const nn::MlpModel& lcnet = models.lcnet;

    ExperimentReport report;
    report.sigma_c = cfg.sigma_c;
    report.sigma_v = cfg.sigma_v;
    report.mode = cfg.mode;
    report.seed = cfg.seed;

    for (std::size_t s = 0; s < cfg.snr_db.size(); ++s) {
        const double energy = std::pow(10.0, cfg.snr_db[s] / 10.0) * cfg.m_p * noise_var / mean_power;
        for (Method method : cfg.methods) {
            NmseAccumulator acc_h;
            NmseAccumulator acc_r;
            std::vector<Position> lenet_errors;
            std::vector<Position> location_errors;
            for (std::size_t m = 0; m < data.size(); ++m) {
                const TrajectoryData& d = data[m];
                // Same pilot noise for every method so differences reflect the CCM alone.
                Rng noise = Rng::substream(cfg.seed, "pilot-noise", (s << 32) | m);
                auto estimate = [&](std::size_t k, const CovMatrix* r) {
                    const PilotMatrix pilots = r != nullptr ? design_pilots(*r, cfg.m_p, energy, cfg.noise_std)
                                                            : ls_pilots(nb, cfg.m_p, energy, cfg.noise_std);
                    std::optional<LmmseEstimator> lmmse;
                    std::optional<LsEstimator> ls;
                    if (r != nullptr) {
                        lmmse.emplace(pilots, *r);
                    } else {
                        ls.emplace(pilots);
                    }
                    std::vector<Channel> out;
                    out.reserve(d.channels[k].size());
                    for (const Channel& h : d.channels[k]) {
                        const PilotObservation y = simulate_pilot_rx(h, pilots, noise);
                        out.push_back(lmmse ? lmmse->estimate(y) : ls->estimate(y));
                        acc_h.add(h, out.back());
                    }
                    if (r != nullptr && !d.oracle.empty()) {
                        acc_r.add(d.oracle[k], *r);
                    }
                    return out;
                };

                const std::size_t n_coct = d.path.cocts.size();
                switch (method) {
                case Method::ls:
                    for (std::size_t k = 0; k < n_coct; ++k) {
                        estimate(k, nullptr);
                    }
                    break;
                case Method::identity_lmmse: {
                    const CovMatrix r = statistical_ccm(std::nullopt, models.lcnet_coefficient, nb);
                    for (std::size_t k = 0; k < n_coct; ++k) {
                        estimate(k, &r);
                    }
                    break;
                }
                case Method::statistical: {
                    std::vector<Channel> prev;
                    for (std::size_t k = 0; k < n_coct; ++k) {
                        const CovMatrix r =
                            k == 0 ? statistical_ccm(std::nullopt, models.lcnet_coefficient, nb)
                                   : statistical_ccm(std::span<const Channel>(prev), models.lcnet_coefficient, nb);
                        prev = estimate(k, &r);
                    }
                    break;
                }
                case Method::perfect:
                    for (std::size_t k = 0; k < n_coct; ++k) {
                        estimate(k, &d.perfect[k]);
                    }
                    break;
                case Method::ulccme_raw:
                case Method::ulccme_noiseless:
                    for (std::size_t k = 0; k < n_coct; ++k) {
                        const CoctRecord& c = d.path.cocts[k];
                        const bool raw = method == Method::ulccme_raw;
                        const Position loc = raw ? d.uploads[k].location : c.start;
                        const double speed = raw ? d.uploads[k].speed : c.speed;
                        const CovMatrix r = nn::lcnet_predict(lcnet, models.lcnet_coefficient, loc, speed);
                        estimate(k, &r);
                        location_errors.push_back(loc - c.start);
                    }
                    break;
                case Method::ulccme_denoised: {
                    DenoiseSetup setup;
                    setup.stats = models.stats;
                    setup.sigma_c = cfg.sigma_c;
                    setup.coct_duration = cfg.timing.t_co;
                    setup.bounds = bounds;
                    setup.localizer = lenet_localizer(models.lenet, models.zeta);
                    auto ccm_of = [&](const Position& loc, double speed) {
                        return nn::lcnet_predict(lcnet, models.lcnet_coefficient, loc, speed);
                    };
                    auto coct = [&](std::size_t k, const CovMatrix& r) -> Feedback {
                        const Channel last = estimate(k, &r).back();
                        if (cfg.feedback == FeedbackVariant::channel) {
                            return last;
                        }
                        return nn::lenet_predict(models.lenet, models.zeta, last);
                    };
                    const DenoiseTrace trace = run_denoised_pipeline(d.uploads, setup, ccm_of, coct);
                    for (std::size_t k = 0; k < n_coct; ++k) {
                        const CoctRecord& c = d.path.cocts[k];
                        lenet_errors.push_back(trace.lenet_estimates[k] - c.cct.back());
                        location_errors.push_back(trace.locations[k] - c.start);
                    }
                    break;
                }
                }
            }
            MethodResult row;
            row.method = method;
            row.snr_db = cfg.snr_db[s];
            row.nmse_h = acc_h.value();
            if (method != Method::ls && grid != nullptr) {
                row.nmse_r = acc_r.value();
            }
            if (!lenet_errors.empty()) {
                row.rmse_l = rmse_l(lenet_errors);
            }
            if (!location_errors.empty()) {
                row.location_rmse = rmse_l(location_errors);
            }
            if (!std::isfinite(row.nmse_h)) {
                throw NumericalError(std::string("non-finite NMSE_H for ") + to_string(method));
            }
            report.rows.push_back(row);
        }
    }
    return report;
}

void write_report_csv(const ExperimentReport& report, std::ostream& out) {
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    out << kReportHeader << '\n';
    for (const MethodResult& r : report.rows) {
        out << to_string(r.method) << ',' << format_double(r.snr_db) << ',' << format_double(r.nmse_h) << ','
            << opt(r.nmse_r) << ',' << opt(r.rmse_l) << ',' << format_double(report.sigma_c) << ','
            << format_double(report.sigma_v) << ',' << to_string(report.mode) << ',' << report.seed << '\n';
    }
}

void write_report_csv(const ExperimentReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write report to " + path);
    }
    write_report_csv(report, out);
}

} // namespace ccm
