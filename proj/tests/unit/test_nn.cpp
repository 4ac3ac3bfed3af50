// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "ccmlab/errors.hpp"
#include "ccmlab/nn.hpp"
#include "test_util.hpp"

using namespace ccm;
using namespace ccm::nn;

namespace {

using A = Activation;

Architecture affine_arch(int in, int out) {
    Architecture a;
    a.inputs = in;
    a.trunk = {{out, A::linear}};
    return a;
}

Architecture relu3_arch() {
    Architecture a;
    a.inputs = 4;
    a.trunk = {{7, A::relu}, {6, A::relu}, {3, A::linear}};
    return a;
}

// Same shape as the location/speed network, just narrower.
Architecture small_fusion_arch(int outputs) {
    Architecture a;
    a.inputs = 3;
    a.branches.push_back({0, 2, {{5, A::relu}, {6, A::relu}}});
    a.branches.push_back({2, 1, {{3, A::relu}, {4, A::relu}}});
    a.gate = {{8, A::relu}, {10, A::sigmoid}};
    a.trunk = {{9, A::relu}, {outputs, A::linear}};
    return a;
}

Eigen::VectorXd gaussian(std::mt19937_64& g, Eigen::Index n) {
    std::normal_distribution<double> d;
    Eigen::VectorXd v(n);
    for (auto& x : v) {
        x = d(g);
    }
    return v;
}

Dataset random_dataset(std::mt19937_64& g, Eigen::Index in, Eigen::Index out, Eigen::Index n) {
    Dataset d;
    d.features.resize(in, n);
    d.labels.resize(out, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d.features.col(i) = gaussian(g, in);
        d.labels.col(i) = gaussian(g, out);
    }
    return d;
}

// Smallest |pre-activation| over all ReLU units, for picking samples away from kinks.
double kink_margin(const MlpModel& m, const Eigen::VectorXd& x) {
    double margin = std::numeric_limits<double>::infinity();
    Eigen::VectorXd a = x;
    for (const auto& l : m.trunk) {
        Eigen::VectorXd z = l.weight * a + l.bias;
        if (l.activation == A::relu) {
            margin = std::min(margin, z.cwiseAbs().minCoeff());
            z = z.cwiseMax(0.0);
        }
        a = z;
    }
    return margin;
}

} // namespace

TEST_CASE("forward basics") {
    MlpModel m = build(affine_arch(3, 2), 1);
    for (auto* l : m.layers()) {
        l->weight.setZero();
        l->bias.setZero();
    }
    CHECK(forward(m, Eigen::Vector3d(1, -2, 3)).isZero(0.0));

    m.trunk[0].weight << 1, 2, 3, -1, 0, 4;
    m.trunk[0].bias << 0.5, -0.25;
    const Eigen::Vector3d x(1, -2, 3);
    const Eigen::Vector2d expect(1 - 4 + 9 + 0.5, -1 + 12 - 0.25);
    CHECK((forward(m, x) - expect).norm() < 1e-14);

    CHECK_THROWS_AS(forward(m, Eigen::Vector2d(1, 2)), ConfigError);
}

TEST_CASE("saturated gate matches ungated network") {
    MlpModel gated = build(small_fusion_arch(4), 7);
    // all-ones attention weights in the large-bias limit
    gated.gate.back().weight.setZero();
    gated.gate.back().bias.setConstant(60.0);

    MlpModel plain = gated;
    plain.gate.clear();

    std::mt19937_64 g(3);
    for (int i = 0; i < 20; ++i) {
        const Eigen::VectorXd x = gaussian(g, 3);
        const Eigen::VectorXd a = forward(gated, x);
        const Eigen::VectorXd b = forward(plain, x);
        CHECK((a - b).norm() <= 1e-12 * (1.0 + b.norm()));
    }

    // a live gate actually changes the output
    MlpModel live = build(small_fusion_arch(4), 7);
    const Eigen::VectorXd x = gaussian(g, 3);
    MlpModel stripped = live;
    stripped.gate.clear();
    CHECK((forward(live, x) - forward(stripped, x)).norm() > 1e-6);
}

TEST_CASE("architecture widths") {
    const MlpModel lc = build(lcnet_architecture(12), 1);
    CHECK(lc.input_width() == 3);
    CHECK(lc.output_width() == 144);
    CHECK(lc.gate.back().out() == 150);
    CHECK(lc.gate.back().activation == A::sigmoid);
    CHECK(lc.trunk.back().activation == A::linear);

    const MlpModel le = build(lenet_architecture(12), 1);
    CHECK(le.input_width() == 24);
    CHECK(le.output_width() == 2);

    CHECK(Architecture::parse(lcnet_architecture(12).describe()).describe() == lcnet_architecture(12).describe());
    CHECK(architecture_of(lc).describe() == lcnet_architecture(12).describe());

    Architecture bad = small_fusion_arch(4);
    bad.gate.back().width = 9; // gate must match the concatenation width
    CHECK_THROWS_AS(build(bad, 1), ConfigError);
}

TEST_CASE("zero learning rate freezes weights") {
    std::mt19937_64 g(5);
    MlpModel m = build(relu3_arch(), 2);
    const MlpModel before = m;
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    const auto res = train(m, random_dataset(g, 4, 3, 40), cfg);
    CHECK(res.loss_trace.size() == 3);
    CHECK(m == before);
}

TEST_CASE("affine fit reaches the least-squares solution") {
    std::mt19937_64 g(11);
    const Eigen::Index n = 64;
    Dataset d = random_dataset(g, 3, 2, n);
    Eigen::Matrix<double, 2, 3> w;
    w << 0.7, -1.2, 0.3, 2.0, 0.1, -0.5;
    for (Eigen::Index i = 0; i < n; ++i) {
        d.labels.col(i) = w * d.features.col(i) + Eigen::Vector2d(0.4, -0.9) + 0.1 * d.labels.col(i);
    }
    // closed form from the normal equations on [x; 1]
    Eigen::MatrixXd xa(4, n);
    xa.topRows(3) = d.features;
    xa.row(3).setOnes();
    const Eigen::MatrixXd ls = (xa * xa.transpose()).ldlt().solve(xa * d.labels.transpose()).transpose();

    MlpModel m = build(affine_arch(3, 2), 4);
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.batch_size = static_cast<int>(n);
    cfg.epochs = 4000;
    cfg.plateau_patience = 20;
    const auto res = train(m, d, cfg);
    CHECK(res.loss_trace.back() < res.loss_trace.front());

    Eigen::MatrixXd fitted(2, 4);
    fitted.leftCols(3) = m.trunk[0].weight;
    fitted.col(3) = m.trunk[0].bias;
    CHECK((fitted - ls).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("training determinism and progress") {
    std::mt19937_64 g(9);
    const Dataset d = random_dataset(g, 3, 4, 96);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 16;
    cfg.seed = 42;
    MlpModel a = build(small_fusion_arch(4), 3);
    MlpModel b = build(small_fusion_arch(4), 3);
    const auto ra = train(a, d, cfg);
    const auto rb = train(b, d, cfg);
    CHECK(a == b);
    CHECK(ra.loss_trace == rb.loss_trace);
    CHECK(ra.loss_trace.back() < ra.loss_trace.front());

    cfg.seed = 43;
    MlpModel c = build(small_fusion_arch(4), 3);
    train(c, d, cfg);
    CHECK_FALSE(a == c);
}

TEST_CASE("non-finite loss aborts") {
    std::mt19937_64 g(2);
    Dataset d = random_dataset(g, 4, 3, 10);
    d.labels(1, 3) = std::numeric_limits<double>::quiet_NaN();
    MlpModel m = build(relu3_arch(), 1);
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(train(m, d, cfg), NumericalError);

    cfg.learning_rate = -1.0;
    CHECK_THROWS_AS(train(m, random_dataset(g, 4, 3, 10), cfg), ConfigError);
}

TEST_CASE("gradient check") {
    std::mt19937_64 g(21);

    SUBCASE("affine") {
        const MlpModel m = build(affine_arch(5, 3), 1);
        const Sample s{gaussian(g, 5), gaussian(g, 3)};
        CHECK(gradient_check(m, s, 1e-5) < 1e-9);
    }

    SUBCASE("three relu layers") {
        MlpModel m = build(relu3_arch(), 6);
        for (auto* l : m.layers()) {
            l->bias = 0.1 * gaussian(g, l->out());
        }
        Eigen::VectorXd x = gaussian(g, 4);
        while (kink_margin(m, x) < 1e-3) {
            x = gaussian(g, 4);
        }
        const auto rep = gradient_check_report(m, Sample{x, gaussian(g, 3)}, 1e-6);
        CHECK(rep.skipped == 0);
        CHECK(rep.checked == m.parameter_count());
        CHECK(rep.max_relative_error < 1e-5);
    }

    SUBCASE("sigmoid gated fusion") {
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            MlpModel m = build(small_fusion_arch(6), seed);
            m.input_shift = gaussian(g, 3);
            m.output_scale = gaussian(g, 6).cwiseAbs().array() + 0.5;
            const auto rep = gradient_check_report(m, Sample{gaussian(g, 3), gaussian(g, 6)}, 1e-6);
            CHECK(rep.max_relative_error < 1e-5);
            CHECK(rep.checked + rep.skipped == m.parameter_count());
        }
    }

    const MlpModel m = build(affine_arch(2, 1), 1);
    CHECK_THROWS_AS(gradient_check(m, Sample{gaussian(g, 2), gaussian(g, 1)}, 1e-2), DomainError);
}

TEST_CASE("lcnet prediction") {
    MlpModel m = build(small_fusion_arch(16), 5);
    std::mt19937_64 g(4);
    std::uniform_real_distribution<double> u(0.0, 20.0);
    for (int i = 0; i < 100; ++i) {
        const CovMatrix r = lcnet_predict(m, 2.5, Position(u(g), u(g)), u(g) / 2.0);
        REQUIRE(r.rows() == 4);
        CHECK((r - r.adjoint()).norm() < 1e-12);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(r);
        CHECK(es.eigenvalues().minCoeff() >= -1e-12 * (1.0 + r.norm()));
    }

    for (auto* l : m.layers()) {
        l->weight.setZero();
        l->bias.setZero();
    }
    CHECK(lcnet_predict(m, 3.0, Position(1, 2), 4.0).norm() == 0.0);

    const MlpModel odd = build(small_fusion_arch(5), 1);
    CHECK_THROWS_AS(lcnet_predict(odd, 1.0, Position(1, 2), 4.0), ConfigError);
}

TEST_CASE("lenet normalization invariance") {
    const MlpModel m = build(lenet_architecture(12), 8);
    std::mt19937_64 g(6);
    for (int i = 0; i < 10; ++i) {
        const Channel h = ccmtest::random_complex(g, 12, 1);
        const Position a = lenet_predict(m, 0.8, h);
        const Position b = lenet_predict(m, 0.8 * 37.5, h * 37.5);
        CHECK((a - b).norm() <= 1e-12 * (1.0 + a.norm()));
    }
    CHECK(lenet_features(ccmtest::random_complex(g, 12, 1), 1.0).size() == 24);
    CHECK_THROWS_AS(lenet_features(ccmtest::random_complex(g, 12, 1), 0.0), DomainError);

    Eigen::MatrixXcd batch = ccmtest::random_complex(g, 12, 5);
    const Eigen::MatrixXd est = lenet_predict_batch(m, 2.0, batch);
    for (Eigen::Index k = 0; k < 5; ++k) {
        CHECK((est.col(k) - lenet_predict(m, 2.0, batch.col(k))).norm() < 1e-12);
    }
}

TEST_CASE("checkpoint round trip and resume") {
    std::mt19937_64 g(12);
    const Dataset d = random_dataset(g, 3, 4, 50);
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.seed = 5;
    cfg.plateau_patience = 1; // exercise the schedule state too

    MlpModel full = build(small_fusion_arch(4), 2);
    fit_normalization(full, d);
    const MlpModel start = full;
    cfg.epochs = 8;
    const auto full_res = train(full, d, cfg);

    MlpModel half = start;
    TrainState state;
    cfg.epochs = 3;
    train(half, d, cfg, state);
    std::stringstream buf;
    save_checkpoint(buf, half, &state);
    Checkpoint ck = load_checkpoint(buf);
    REQUIRE(ck.state.has_value());
    CHECK(ck.model == half);
    CHECK(ck.state->epochs_done == 3);

    cfg.epochs = 8;
    const auto resumed = train(ck.model, d, cfg, *ck.state);
    CHECK(ck.model == full);
    CHECK(ck.state->loss_trace == full_res.loss_trace);
    CHECK(resumed.loss_trace.size() == 8);

    std::stringstream plain;
    save_checkpoint(plain, full);
    CHECK(plain.str().rfind("mlpckpt 1\n", 0) == 0);
    const Checkpoint bare = load_checkpoint(plain);
    CHECK_FALSE(bare.state.has_value());
    CHECK(bare.model == full);

    std::stringstream junk("mlpckpt 2\n");
    CHECK_THROWS(load_checkpoint(junk));
}
