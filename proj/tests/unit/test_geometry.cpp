// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ccmlab/errors.hpp"
#include "ccmlab/geometry.hpp"
#include "test_util.hpp"

using namespace ccm;
using std::numbers::pi;

namespace {

// Oracle: build the two factors separately and take their Kronecker product.
Channel kron_oracle(const ArrayConfig& c, double th, double ph) {
    Eigen::VectorXcd az(c.n_az);
    Eigen::VectorXcd ele(c.n_ele);
    for (int p = 0; p < c.n_az; ++p) {
        az[p] = std::exp(cplx(0.0, 2.0 * pi * c.spacing_ratio * p * std::sin(th) * std::sin(ph)));
    }
    for (int q = 0; q < c.n_ele; ++q) {
        ele[q] = std::exp(cplx(0.0, 2.0 * pi * c.spacing_ratio * q * std::cos(th)));
    }
    Channel out(c.n_az * c.n_ele);
    for (int p = 0; p < c.n_az; ++p) {
        for (int q = 0; q < c.n_ele; ++q) {
            out[p * c.n_ele + q] = az[p] * ele[q];
        }
    }
    return out / std::sqrt(static_cast<double>(out.size()));
}

} // namespace

TEST_CASE("broadside steering vector is flat") {
    const ArrayConfig cfg;
    const Channel a = steering_vector(cfg, pi / 2, 0.0);
    REQUIRE(a.size() == 12);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        CHECK(std::abs(a[i] - cplx(1.0 / std::sqrt(12.0), 0.0)) < 1e-15);
    }
}

TEST_CASE("two-element elevation array at 60 degrees") {
    const ArrayConfig cfg{2, 1, 0.5};
    const Channel a = steering_vector(cfg, pi / 3, 0.0);
    CHECK(std::abs(a[0] - cplx(1.0, 0.0) / std::sqrt(2.0)) < 1e-15);
    CHECK(std::abs(a[1] - cplx(0.0, 1.0) / std::sqrt(2.0)) < 1e-15);
}

TEST_CASE("unit norm and Kronecker layout over random angles") {
    std::mt19937_64 g(11);
    std::uniform_real_distribution<double> th(0.0, pi);
    std::uniform_real_distribution<double> ph(-pi, pi);
    const ArrayConfig cfgs[] = {{3, 4, 0.5}, {1, 7, 0.3}, {5, 2, 1.1}};
    for (const auto& cfg : cfgs) {
        for (int i = 0; i < 1000; ++i) {
            const double t = th(g);
            const double p = ph(g);
            const Channel a = steering_vector(cfg, t, p);
            CHECK(std::abs(a.norm() - 1.0) < 1e-12);
            CHECK((a - kron_oracle(cfg, t, p)).norm() < 1e-12);
        }
    }
}

TEST_CASE("angle domain and config validation") {
    const ArrayConfig cfg;
    CHECK_THROWS_AS(steering_vector(cfg, -0.1, 0.0), DomainError);
    CHECK_THROWS_AS(steering_vector(cfg, 0.1, 3.5), DomainError);
    CHECK_THROWS_AS(steering_vector(cfg, std::nan(""), 0.0), DomainError);
    CHECK_THROWS(steering_vector(ArrayConfig{0, 4, 0.5}, 1.0, 0.0));
    CHECK_THROWS(steering_vector(ArrayConfig{3, 4, 0.0}, 1.0, 0.0));
}

TEST_CASE("channel synthesis") {
    const ArrayConfig cfg;
    std::vector<PathComponent> one{{cplx(1.0, 0.0), 1.0, 0.4}};
    CHECK((synthesize_channel(cfg, one) - steering_vector(cfg, 1.0, 0.4)).norm() < 1e-15);

    std::vector<PathComponent> cancel{{cplx(2.0, 0.0), 0.7, -1.0}, {cplx(-2.0, 0.0), 0.7, -1.0}};
    CHECK(synthesize_channel(cfg, cancel).norm() < 1e-15);

    CHECK_THROWS_AS(synthesize_channel(cfg, std::vector<PathComponent>{}), DomainError);
    std::vector<PathComponent> bad{{cplx(std::nan(""), 0.0), 1.0, 0.0}};
    CHECK_THROWS_AS(synthesize_channel(cfg, bad), DomainError);
}

TEST_CASE("synthesis is additive and homogeneous") {
    std::mt19937_64 g(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const ArrayConfig cfg;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<PathComponent> p1;
        std::vector<PathComponent> p2;
        for (int i = 0; i < 3; ++i) {
            p1.push_back({cplx(u(g), u(g)), (u(g) + 1.0) * pi / 2, u(g) * pi});
            p2.push_back({cplx(u(g), u(g)), (u(g) + 1.0) * pi / 2, u(g) * pi});
        }
        std::vector<PathComponent> both = p1;
        both.insert(both.end(), p2.begin(), p2.end());
        const Channel sum = synthesize_channel(cfg, p1) + synthesize_channel(cfg, p2);
        CHECK((synthesize_channel(cfg, both) - sum).norm() < 1e-12);

        const cplx s(u(g), u(g));
        std::vector<PathComponent> scaled = p1;
        for (auto& p : scaled) {
            p.gain *= s;
        }
        CHECK((synthesize_channel(cfg, scaled) - s * synthesize_channel(cfg, p1)).norm() < 1e-12);
    }
}
