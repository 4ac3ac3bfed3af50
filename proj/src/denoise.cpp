// SPDX-License-Identifier: Apache-2.0
#include "ccmlab/denoise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ccmlab/errors.hpp"
#include "ccmlab/random.hpp"

namespace ccm {

namespace {

constexpr double kCovFloor = 1e-9;

Eigen::Matrix2d precision(const Eigen::Matrix2d& cov, const char* what) {
    const Eigen::Matrix2d c = regularized(cov);
    Eigen::LLT<Eigen::Matrix2d> llt(c);
    if (!c.allFinite() || llt.info() != Eigen::Success) {
        throw NumericalError(std::string(what) + " covariance is singular or not positive definite");
    }
    return llt.solve(Eigen::Matrix2d::Identity());
}

Eigen::Matrix2d symmetrized(const Eigen::Matrix2d& m) { return 0.5 * (m + m.transpose()); }

} // namespace

BatchLocalizer lenet_localizer(const nn::MlpModel& lenet, double zeta) {
    return [&lenet, zeta](const Eigen::MatrixXcd& channels) { return nn::lenet_predict_batch(lenet, zeta, channels); };
}

Eigen::Matrix2Xd location_errors(const BatchLocalizer& localizer,
                                 std::span<const std::pair<Channel, Position>> samples, double noise_var,
                                 int draws_per_sample, std::uint64_t seed) {
    if (draws_per_sample < 1 || samples.empty()) {
        throw DomainError("location errors need W >= 1 samples and Q >= 1 draws");
    }
    if (!(noise_var >= 0.0)) {
        throw DomainError("noise variance must be nonnegative");
    }
    Rng rng(seed);
    const std::size_t total = samples.size() * static_cast<std::size_t>(draws_per_sample);
    Eigen::Matrix2Xd errors(2, static_cast<Eigen::Index>(total));
    Eigen::Index col = 0;
    for (const auto& [h, x] : samples) {
        Eigen::MatrixXcd batch = h.replicate(1, draws_per_sample);
        if (noise_var > 0.0) {
            for (Eigen::Index j = 0; j < batch.cols(); ++j) {
                for (Eigen::Index i = 0; i < batch.rows(); ++i) {
                    batch(i, j) += rng.complex_normal(noise_var);
                }
            }
        }
        const Eigen::MatrixXd est = localizer(batch);
        if (est.rows() != 2 || est.cols() != draws_per_sample) {
            throw ConfigError("localizer must return a 2 x K coordinate matrix");
        }
        errors.middleCols(col, draws_per_sample) = est.colwise() - x;
        col += draws_per_sample;
    }
    return errors;
}

ErrorStats estimate_error_stats(const BatchLocalizer& localizer,
                                std::span<const std::pair<Channel, Position>> samples, double noise_var,
                                int draws_per_sample, std::uint64_t seed) {
    if (samples.size() * static_cast<std::size_t>(std::max(draws_per_sample, 0)) < 2) {
        throw DomainError("error covariance needs W * Q >= 2");
    }
    const Eigen::Matrix2Xd errors = location_errors(localizer, samples, noise_var, draws_per_sample, seed);
    const auto total = static_cast<double>(errors.cols());
    ErrorStats s;
    s.mean = errors.rowwise().mean();
    const Eigen::Matrix2Xd centered = errors.colwise() - s.mean;
    s.cov = symmetrized(centered * centered.transpose() / (total - 1.0));
    s.samples = samples.size();
    s.draws = static_cast<std::size_t>(draws_per_sample);
    s.noise_var = noise_var;
    s.seed = seed;
    return s;
}

GaussianBelief motion_prior(const GaussianBelief& belief, double speed, double coct_duration) {
    if (!(speed >= 0.0) || !(coct_duration >= 0.0)) {
        throw DomainError("speed and COCT duration must be nonnegative");
    }
    GaussianBelief out = belief;
    const double reach = speed * coct_duration;
    out.cov.diagonal().array() += reach * reach / 4.0;
    return out;
}

Eigen::Matrix2d regularized(const Eigen::Matrix2d& cov) {
    const Eigen::Matrix2d c = symmetrized(cov);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(c, Eigen::EigenvaluesOnly);
    if (eig.info() == Eigen::Success && eig.eigenvalues().minCoeff() >= kCovFloor) {
        return c;
    }
    return c + kCovFloor * Eigen::Matrix2d::Identity();
}

GaussianBelief fuse(const GaussianBelief& prior, const ErrorStats& stats, const DenoiseInputs& in) {
    if (!(in.uploaded_noise_var >= 0.0)) {
        throw DomainError("upload noise variance must be nonnegative");
    }
    const GaussianBelief predicted = motion_prior(prior, in.speed, in.coct_duration);
    const Eigen::Matrix2d p_upload = precision(in.uploaded_noise_var * Eigen::Matrix2d::Identity(), "upload");
    const Eigen::Matrix2d p_lenet = precision(stats.cov, "LENET error");
    const Eigen::Matrix2d p_prior = precision(predicted.cov, "prior");

    const Eigen::Vector2d corrected = in.lenet_estimate - stats.mean;
    const Eigen::Matrix2d total = symmetrized(p_upload + p_lenet + p_prior);
    Eigen::LLT<Eigen::Matrix2d> llt(total);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("fused precision is not positive definite");
    }
    GaussianBelief out;
    out.cov = symmetrized(llt.solve(Eigen::Matrix2d::Identity()));
    out.mean = out.cov * (p_lenet * corrected + p_upload * in.uploaded_location + p_prior * predicted.mean);
    if (!out.mean.allFinite() || !out.cov.allFinite()) {
        throw NumericalError("fusion produced non-finite values");
    }
    return out;
}

DenoiseTrace run_denoised_pipeline(std::span<const Upload> uploads, const DenoiseSetup& setup,
                                   const std::function<CovMatrix(const Position&, double)>& estimate_ccm,
                                   const std::function<Feedback(std::size_t, const CovMatrix&)>& run_coct) {
    DenoiseTrace trace;
    if (uploads.empty()) {
        return trace;
    }
    const double var_c = setup.sigma_c * setup.sigma_c;
    auto to_location = [&](const Feedback& fb) -> Position {
        if (const auto* p = std::get_if<Position>(&fb)) {
            return *p;
        }
        if (!setup.localizer) {
            throw ConfigError("channel feedback requires a localizer");
        }
        const Eigen::MatrixXd est = setup.localizer(std::get<Channel>(fb));
        return est.col(0);
    };

    GaussianBelief belief;
    belief.mean = uploads[0].location;
    belief.cov = var_c * Eigen::Matrix2d::Identity();

    for (std::size_t k = 0; k < uploads.size(); ++k) {
        Position location;
        if (k == 0) {
            location = uploads[0].location;
        } else {
            DenoiseInputs in;
            in.uploaded_location = uploads[k].location;
            in.uploaded_noise_var = var_c;
            in.lenet_estimate = trace.lenet_estimates.back();
            in.speed = uploads[k - 1].speed;
            in.coct_duration = setup.coct_duration;
            belief = fuse(belief, setup.stats, in);
            location = setup.bounds.clamp(belief.mean);
        }
        CovMatrix r = estimate_ccm(location, uploads[k].speed);
        trace.lenet_estimates.push_back(to_location(run_coct(k, r)));
        trace.locations.push_back(location);
        trace.ccms.push_back(std::move(r));
        trace.beliefs.push_back(belief);
    }
    return trace;
}

void save_error_stats(const ErrorStats& s, const std::string& path) {
    nlohmann::json j;
    j["schema"] = 1;
    j["mean"] = {s.mean.x(), s.mean.y()};
    j["cov"] = {{s.cov(0, 0), s.cov(0, 1)}, {s.cov(1, 0), s.cov(1, 1)}};
    j["W"] = s.samples;
    j["Q"] = s.draws;
    j["noise_var"] = s.noise_var;
    j["seed"] = s.seed;
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write error statistics to " + path);
    }
    out << j.dump(2) << '\n';
}

ErrorStats load_error_stats(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open error statistics " + path);
    }
    try {
        nlohmann::json j;
        in >> j;
        ErrorStats s;
        s.mean = {j.at("mean")[0].get<double>(), j.at("mean")[1].get<double>()};
        const auto& c = j.at("cov");
        s.cov << c[0][0].get<double>(), c[0][1].get<double>(), c[1][0].get<double>(), c[1][1].get<double>();
        s.samples = j.at("W").get<std::size_t>();
        s.draws = j.at("Q").get<std::size_t>();
        s.noise_var = j.value("noise_var", 0.0);
        s.seed = j.value("seed", std::uint64_t{0});
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed error statistics " + path + ": " + e.what());
    }
}

} // namespace ccm
