// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <vector>

#include "ccmlab/denoise.hpp"
#include "ccmlab/errors.hpp"
#include "test_util.hpp"

using namespace ccm;
using ccmtest::cplx;

namespace {

using Samples = std::vector<std::pair<Channel, Position>>;

// Channels that carry their own location in the real parts of two entries.
Samples coded_samples(std::mt19937_64& g, int count) {
    std::uniform_real_distribution<double> u(0.0, 30.0);
    Samples s;
    for (int i = 0; i < count; ++i) {
        const Position p(u(g), u(g));
        Channel h(2);
        h << cplx(p.x(), 0.0), cplx(p.y(), 0.0);
        s.emplace_back(h, p);
    }
    return s;
}

BatchLocalizer read_back(const Position& offset = Position::Zero()) {
    return [offset](const Eigen::MatrixXcd& h) -> Eigen::MatrixXd {
        Eigen::MatrixXd out = h.real();
        out.colwise() += offset;
        return out;
    };
}

double min_eig(const Eigen::Matrix2d& m) { return Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(m).eigenvalues()[0]; }

GaussianBelief grid_product(const std::vector<std::pair<Eigen::Vector2d, Eigen::Matrix2d>>& terms, double half,
                            int n) {
    const auto m = ccmtest::grid_product(terms, half, n);
    return {m.mean, m.cov};
}

ErrorStats stats_with(const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov) {
    ErrorStats s;
    s.mean = mean;
    s.cov = cov;
    return s;
}

} // namespace

TEST_CASE("error statistics") {
    std::mt19937_64 g(1);
    const Samples s = coded_samples(g, 50);

    const ErrorStats perfect = estimate_error_stats(read_back(), s, 0.0, 3, 1);
    CHECK(perfect.mean.norm() < 1e-12);
    CHECK(perfect.cov.norm() < 1e-12);
    CHECK(perfect.samples == 50);
    CHECK(perfect.draws == 3);

    const Position b(0.7, -1.3);
    const ErrorStats biased = estimate_error_stats(read_back(b), s, 0.0, 2, 1);
    CHECK((biased.mean - b).norm() < 1e-12);
    CHECK(biased.cov.norm() < 1e-12);

    // read-back error is Re(noise): N(0, noise_var / 2) per axis
    const Samples many = coded_samples(g, 500);
    const double nv = 0.8;
    const ErrorStats noisy = estimate_error_stats(read_back(), many, nv, 20, 7);
    CHECK((noisy.cov - 0.4 * Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 0.04);
    CHECK(noisy.mean.norm() < 0.03);
    CHECK(noisy.noise_var == nv);

    // same draws, covariance recomputed with the W Q - 1 divisor
    const Eigen::Matrix2Xd errs = location_errors(read_back(), many, nv, 20, 7);
    REQUIRE(errs.cols() == 10000);
    const Eigen::Vector2d m = errs.rowwise().mean();
    const Eigen::Matrix2Xd c = errs.colwise() - m;
    CHECK((noisy.cov - c * c.transpose() / 9999.0).norm() < 1e-12);
    const ErrorStats again = estimate_error_stats(read_back(), many, nv, 20, 7);
    CHECK(again.cov == noisy.cov);

    CHECK_THROWS_AS(estimate_error_stats(read_back(), Samples(s.begin(), s.begin() + 1), 0.0, 1, 1), DomainError);

    const auto path = std::filesystem::temp_directory_path() / "ccm_error_stats_test.json";
    save_error_stats(noisy, path.string());
    const ErrorStats back = load_error_stats(path.string());
    CHECK(back.mean == noisy.mean);
    CHECK(back.cov == noisy.cov);
    CHECK(back.samples == 500);
    CHECK(back.draws == 20);
    CHECK(back.seed == 7);
    std::filesystem::remove(path);
}

TEST_CASE("motion prior") {
    GaussianBelief b;
    b.mean = Eigen::Vector2d(3, 4);
    b.cov << 2.0, 0.5, 0.5, 1.0;
    const GaussianBelief still = motion_prior(b, 0.0, 1.0);
    CHECK(still.mean == b.mean);
    CHECK(still.cov == b.cov);

    const GaussianBelief moved = motion_prior(b, 2.0, 1.0);
    CHECK(moved.mean == b.mean);
    CHECK((moved.cov - b.cov - Eigen::Matrix2d::Identity()).norm() < 1e-15);

    // the surrogate matches the covariance of a uniform disc
    std::mt19937_64 g(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double r = 3.0;
    Eigen::Matrix2d acc = Eigen::Matrix2d::Zero();
    int kept = 0;
    while (kept < 1000000) {
        const Eigen::Vector2d p(u(g), u(g));
        if (p.squaredNorm() <= 1.0) {
            acc += r * r * p * p.transpose();
            ++kept;
        }
    }
    acc /= kept;
    const Eigen::Matrix2d surrogate = motion_prior(GaussianBelief{}, r, 1.0).cov;
    CHECK((acc - surrogate).cwiseAbs().maxCoeff() < 0.01 * surrogate(0, 0));
}

TEST_CASE("fusion") {
    SUBCASE("symmetric") {
        GaussianBelief prior;
        prior.mean = Eigen::Vector2d(1, 2);
        prior.cov = 0.5 * Eigen::Matrix2d::Identity();
        DenoiseInputs in;
        in.uploaded_location = Position(4, -1);
        in.uploaded_noise_var = 0.5;
        in.lenet_estimate = Position(2.5, 0.5);
        const Position bias(0.5, 0.5);
        const GaussianBelief out = fuse(prior, stats_with(bias, 0.5 * Eigen::Matrix2d::Identity()), in);
        const Eigen::Vector2d expect = (in.lenet_estimate - bias + in.uploaded_location + prior.mean) / 3.0;
        CHECK((out.mean - expect).norm() < 1e-12);
        CHECK((out.cov - Eigen::Matrix2d::Identity() / 6.0).norm() < 1e-12);
    }

    SUBCASE("useless upload") {
        std::mt19937_64 g(4);
        GaussianBelief prior{Eigen::Vector2d(5, 5), ccmtest::random_spd2(g)};
        const ErrorStats st = stats_with(Eigen::Vector2d(0.1, 0.0), ccmtest::random_spd2(g));
        DenoiseInputs in;
        in.uploaded_location = Position(100, -50);
        in.lenet_estimate = Position(6, 4);
        in.speed = 1.0;
        in.coct_duration = 1.0;
        const GaussianBelief pred = motion_prior(prior, 1.0, 1.0);
        const Eigen::Matrix2d pa = pred.cov.inverse();
        const Eigen::Matrix2d pb = st.cov.inverse();
        const Eigen::Vector2d two = (pa + pb).inverse() * (pa * pred.mean + pb * (in.lenet_estimate - st.mean));
        double prev = 1e300;
        for (double var : {1e2, 1e4, 1e6, 1e8}) {
            in.uploaded_noise_var = var;
            const double d = (fuse(prior, st, in).mean - two).norm();
            CHECK(d < prev);
            prev = d;
        }
        CHECK(prev < 1e-5);
    }

    SUBCASE("grid density oracle, dominance and additivity") {
        std::mt19937_64 g(5);
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        std::uniform_real_distribution<double> var(0.3, 2.5);
        for (int t = 0; t < 6; ++t) {
            GaussianBelief prior{Eigen::Vector2d(u(g), u(g)), ccmtest::random_spd2(g)};
            const ErrorStats st = stats_with(Eigen::Vector2d(u(g), u(g)) / 4.0, ccmtest::random_spd2(g));
            DenoiseInputs in;
            in.uploaded_location = Position(u(g), u(g));
            in.uploaded_noise_var = var(g);
            in.lenet_estimate = Position(u(g), u(g));
            in.speed = 0.5 + 0.2 * t;
            in.coct_duration = 1.0;
            const GaussianBelief out = fuse(prior, st, in);
            const GaussianBelief pred = motion_prior(prior, in.speed, in.coct_duration);

            const Eigen::Matrix2d upload_cov = in.uploaded_noise_var * Eigen::Matrix2d::Identity();
            const GaussianBelief oracle = grid_product({{pred.mean, pred.cov},
                                                        {in.lenet_estimate - st.mean, st.cov},
                                                        {in.uploaded_location, upload_cov}},
                                                       9.0, 901);
            CHECK((out.mean - oracle.mean).norm() < 1e-3);
            CHECK((out.cov - oracle.cov).norm() < 1e-3 * out.cov.norm());

            const Eigen::Matrix2d info = upload_cov.inverse() + st.cov.inverse() + pred.cov.inverse();
            CHECK((out.cov.inverse() - info).norm() < 1e-10 * info.norm());

            CHECK(min_eig(upload_cov - out.cov) >= -1e-10);
            CHECK(min_eig(st.cov - out.cov) >= -1e-10);
            CHECK(min_eig(pred.cov - out.cov) >= -1e-10);

            // the two measurement slots are interchangeable when their statistics match
            const ErrorStats iso = stats_with(st.mean, upload_cov);
            DenoiseInputs iso_in = in;
            const GaussianBelief a = fuse(prior, iso, iso_in);
            iso_in.uploaded_location = in.lenet_estimate - st.mean;
            iso_in.lenet_estimate = in.uploaded_location + st.mean;
            const GaussianBelief b = fuse(prior, iso, iso_in);
            CHECK((a.mean - b.mean).norm() < 1e-10);
            CHECK((a.cov - b.cov).norm() < 1e-12);
        }
    }

    SUBCASE("degenerate inputs") {
        GaussianBelief prior{Eigen::Vector2d(1, 1), Eigen::Matrix2d::Zero()};
        DenoiseInputs in;
        in.uploaded_location = Position(2, 2);
        in.uploaded_noise_var = 0.0;
        in.lenet_estimate = Position(3, 3);
        const GaussianBelief out = fuse(prior, stats_with(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Zero()), in);
        CHECK(out.mean.allFinite());
        CHECK((out.mean - Eigen::Vector2d(2, 2)).norm() < 1e-9);

        CHECK(regularized(Eigen::Matrix2d::Identity()) == Eigen::Matrix2d::Identity());
        CHECK(min_eig(regularized(Eigen::Matrix2d::Zero())) == doctest::Approx(1e-9));

        in.uploaded_noise_var = -1.0;
        CHECK_THROWS_AS(fuse(prior, ErrorStats{}, in), DomainError);
    }
}

namespace {

struct Walk {
    std::vector<Position> starts; ///< true location at the start of each COCT
    std::vector<Upload> uploads;
};

Walk random_walk(std::mt19937_64& g, int n, double speed, double sigma_c) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, sigma_c);
    Walk w;
    Position x(500.0, 500.0);
    for (int k = 0; k <= n; ++k) {
        w.starts.push_back(x);
        const double r = speed * std::sqrt(u(g));
        const double a = 2.0 * std::numbers::pi * u(g);
        x += r * Position(std::cos(a), std::sin(a));
    }
    for (int k = 0; k < n; ++k) {
        w.uploads.push_back({w.starts[static_cast<std::size_t>(k)] + Position(noise(g), noise(g)), speed});
    }
    return w;
}

DenoiseSetup wide_setup(const ErrorStats& st, double sigma_c) {
    DenoiseSetup s;
    s.stats = st;
    s.sigma_c = sigma_c;
    s.coct_duration = 1.0;
    s.bounds = Bounds{0.0, 1000.0, 0.0, 1000.0};
    return s;
}

CovMatrix tag_ccm(const Position& p, double speed) {
    CovMatrix r(1, 1);
    r(0, 0) = cplx(p.x() + 1000.0 * p.y(), speed);
    return r;
}

} // namespace

TEST_CASE("denoised pipeline") {
    std::mt19937_64 g(8);

    SUBCASE("single COCT uses the raw upload") {
        const Walk w = random_walk(g, 1, 2.0, 2.0);
        const auto tr = run_denoised_pipeline(w.uploads, wide_setup(ErrorStats{}, 2.0), tag_ccm,
                                              [](std::size_t, const CovMatrix&) { return Feedback{Position(0, 0)}; });
        REQUIRE(tr.locations.size() == 1);
        CHECK(tr.locations[0] == w.uploads[0].location);
        CHECK(tr.ccms[0] == tag_ccm(w.uploads[0].location, w.uploads[0].speed));
        CHECK(tr.beliefs[0].cov == 4.0 * Eigen::Matrix2d::Identity());
    }

    SUBCASE("exact uploads with a vague localizer") {
        const Walk w = random_walk(g, 8, 2.0, 0.0);
        const ErrorStats vague = stats_with(Eigen::Vector2d::Zero(), 1e6 * Eigen::Matrix2d::Identity());
        const auto tr = run_denoised_pipeline(w.uploads, wide_setup(vague, 0.0), tag_ccm,
                                              [](std::size_t, const CovMatrix&) { return Feedback{Position(0, 0)}; });
        for (std::size_t k = 0; k < w.uploads.size(); ++k) {
            CHECK((tr.locations[k] - w.uploads[k].location).norm() < 1e-6);
        }
    }

    SUBCASE("exact localizer pulls toward the previous end point") {
        const Walk w = random_walk(g, 6, 2.0, 30.0);
        auto feedback = [&](std::size_t k, const CovMatrix&) { return Feedback{w.starts[k + 1]}; };
        double prev = 1e300;
        for (double eps : {1e-1, 1e-3, 1e-5, 1e-7}) {
            const ErrorStats tight = stats_with(Eigen::Vector2d::Zero(), eps * Eigen::Matrix2d::Identity());
            const auto tr = run_denoised_pipeline(w.uploads, wide_setup(tight, 30.0), tag_ccm, feedback);
            double worst = 0.0;
            for (std::size_t k = 1; k < w.uploads.size(); ++k) {
                worst = std::max(worst, (tr.locations[k] - w.starts[k]).norm());
            }
            CHECK(worst < prev);
            prev = worst;
        }
        CHECK(prev < 1e-5);
    }

    SUBCASE("channel feedback goes through the localizer") {
        const Walk w = random_walk(g, 4, 1.0, 1.0);
        DenoiseSetup s = wide_setup(stats_with(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity()), 1.0);
        auto by_channel = [&](std::size_t k, const CovMatrix&) {
            Channel h(2);
            h << cplx(w.starts[k + 1].x(), 0.0), cplx(w.starts[k + 1].y(), 0.0);
            return Feedback{h};
        };
        CHECK_THROWS_AS(run_denoised_pipeline(w.uploads, s, tag_ccm, by_channel), ConfigError);
        s.localizer = read_back();
        const auto a = run_denoised_pipeline(w.uploads, s, tag_ccm, by_channel);
        const auto b = run_denoised_pipeline(w.uploads, s, tag_ccm,
                                             [&](std::size_t k, const CovMatrix&) { return Feedback{w.starts[k + 1]}; });
        CHECK(a.locations == b.locations);
        CHECK(a.lenet_estimates == b.lenet_estimates);
    }

    SUBCASE("fused locations are clamped to the plane") {
        std::vector<Upload> up{{Position(1, 1), 1.0}, {Position(-40, 45), 1.0}};
        DenoiseSetup s = wide_setup(stats_with(Eigen::Vector2d::Zero(), 1e6 * Eigen::Matrix2d::Identity()), 0.1);
        s.bounds = Bounds{0.0, 30.0, 0.0, 30.0};
        const auto tr = run_denoised_pipeline(up, s, tag_ccm,
                                              [](std::size_t, const CovMatrix&) { return Feedback{Position(0, 0)}; });
        CHECK(tr.locations[1].x() == 0.0);
        CHECK(tr.locations[1].y() == 30.0);
        CHECK(tr.ccms[1] == tag_ccm(Position(0, 30), 1.0));
    }

    SUBCASE("denoising beats raw uploads") {
        const double sigma_c = 2.0;
        const double lenet_std = 1.5;
        const ErrorStats st = stats_with(Eigen::Vector2d(0.3, -0.2), lenet_std * lenet_std * Eigen::Matrix2d::Identity());
        std::normal_distribution<double> n(0.0, lenet_std);
        double raw = 0.0;
        double fused = 0.0;
        int count = 0;
        for (int traj = 0; traj < 25; ++traj) {
            const Walk w = random_walk(g, 10, 2.0, sigma_c);
            auto feedback = [&](std::size_t k, const CovMatrix&) {
                return Feedback{Position(w.starts[k + 1] + st.mean + Position(n(g), n(g)))};
            };
            const auto tr = run_denoised_pipeline(w.uploads, wide_setup(st, sigma_c), tag_ccm, feedback);
            for (std::size_t k = 1; k < w.uploads.size(); ++k) {
                raw += (w.uploads[k].location - w.starts[k]).squaredNorm();
                fused += (tr.locations[k] - w.starts[k]).squaredNorm();
                ++count;
            }
        }
        CHECK(count >= 200);
        CHECK(fused < raw);
    }
}
