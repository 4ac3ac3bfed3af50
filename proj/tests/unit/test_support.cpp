// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "ccmlab/errors.hpp"
#include "ccmlab/random.hpp"
#include "ccmlab/textio.hpp"
#include "ccmlab/timing.hpp"

using namespace ccm;

TEST_CASE("rng is reproducible and substreams are distinct") {
    Rng a(7);
    Rng b(7);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    std::set<std::uint64_t> firsts;
    for (std::uint64_t i = 0; i < 50; ++i) {
        firsts.insert(Rng::substream(7, "trajectory", i).next_u64());
    }
    firsts.insert(Rng::substream(7, "uploads", 0).next_u64());
    firsts.insert(Rng::substream(8, "trajectory", 0).next_u64());
    CHECK(firsts.size() == 52);
}

TEST_CASE("rng draws have the advertised moments") {
    Rng r(3);
    const int n = 200000;
    double s = 0.0;
    double s2 = 0.0;
    double cre = 0.0;
    double cim = 0.0;
    double below_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
        const auto z = r.complex_normal(2.0);
        cre += z.real() * z.real();
        cim += z.imag() * z.imag();
        const double u = r.uniform();
        CHECK_UNARY(u >= 0.0);
        CHECK_UNARY(u < 1.0);
        below_sum += static_cast<double>(r.below(10));
    }
    CHECK(s / n == doctest::Approx(0.0).epsilon(0.01).scale(1.0));
    CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
    // circularly symmetric: each half carries variance/2
    CHECK(cre / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(cim / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(below_sum / n == doctest::Approx(4.5).epsilon(0.01));
}

TEST_CASE("doubles round-trip through text") {
    for (double v : {0.0, -0.0, 1.0, 0.1, 1e-300, 6.02214076e23, -3.141592653589793, 5e-324}) {
        CHECK(parse_double(format_double(v)) == v);
    }
    CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
    CHECK(std::isnan(parse_double("nan")));
    CHECK(parse_double("-inf") == -std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(parse_double("1.5x"), ConfigError);
    CHECK_THROWS_AS(parse_double(""), ConfigError);
    CHECK(parse_int("-42") == -42);
    CHECK_THROWS_AS(parse_int("4.2"), ConfigError);
}

TEST_CASE("splitting") {
    const auto w = split_ws("  a bb\tccc  ");
    REQUIRE(w.size() == 3);
    CHECK(w[2] == "ccc");
    const auto c = split("1,,3", ',');
    REQUIRE(c.size() == 3);
    CHECK(c[1].empty());
}

TEST_CASE("frame timing") {
    const FrameTiming t;
    CHECK(t.offset(1) == doctest::Approx(0.005));
    CHECK(t.horizon() == doctest::Approx(0.25));
    CHECK(t.t_co == doctest::Approx(t.t_o + t.n_cct * t.t_c));
    CHECK_NOTHROW(t.validate());
    FrameTiming bad = t;
    bad.t_co = 0.1;
    CHECK_THROWS(bad.validate());
    bad = t;
    bad.t_c = -1.0;
    CHECK_THROWS(bad.validate());
}
