#include "doctest.h"
#include "oracles.hpp"

#include <cmath>
#include <random>

#include "fust/model/small_convnet.hpp"
#include "fust/numerics/gradcheck.hpp"
#include "fust/numerics/loss.hpp"
#include "fust/numerics/metrics.hpp"
#include "fust/numerics/ops.hpp"
#include "fust/numerics/optim.hpp"

using namespace fust;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor t(std::move(shape), 0.0);
    for (auto& v : t.storage()) v = d(rng);
    return t;
}

} // namespace

TEST_CASE("tensor invariants") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(t.reshaped({4}), DimensionError);
    CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
}

TEST_CASE("conv2d_forward: zero input gives zero output") {
    std::mt19937_64 rng(1);
    Tensor x({1, 1, 3, 3}, 0.0);
    Tensor w = random_tensor({2, 1, 3, 3}, rng);
    Tensor y = conv2d_forward(x, w, Tensor({2}, 0.0), {1, 1});
    for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("conv2d_forward: identity 1x1 kernel") {
    std::mt19937_64 rng(2);
    Tensor x = random_tensor({2, 1, 5, 4}, rng);
    Tensor y = conv2d_forward(x, Tensor({1, 1, 1, 1}, 1.0), Tensor(), {1, 0});
    CHECK(y == x);
}

TEST_CASE("conv2d_forward: hand cross-correlation") {
    Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor w = Tensor::from({1, 1, 2, 2}, {1, 0, 0, 1});
    Tensor y = conv2d_forward(x, w, Tensor(), {1, 0});
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == 5.0);
    CHECK(oracle::conv2d(x, w, Tensor(), 1, 0)[0] == 5.0);
}

TEST_CASE("conv2d_forward equals the brute-force oracle exactly") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> dim(1, 8), small(1, 4), kd(1, 3), sd(1, 2), pd(0, 1), nd(1, 2);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = nd(rng), c = small(rng), o = small(rng), h = dim(rng), w = dim(rng), k = kd(rng);
        const std::size_t s = sd(rng), p = pd(rng);
        if (h + 2 * p < k || w + 2 * p < k) continue;
        Tensor x = random_tensor({n, c, h, w}, rng, -10, 10);
        Tensor wt = random_tensor({o, c, k, k}, rng, -10, 10);
        Tensor b = random_tensor({o}, rng, -10, 10);
        Tensor got = conv2d_forward(x, wt, b, {s, p});
        Tensor want = oracle::conv2d(x, wt, b, s, p);
        REQUIRE(got.shape() == want.shape());
        for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(got[i] == want[i]);
    }
}

TEST_CASE("conv2d_forward shape errors name the axes") {
    Tensor x({1, 2, 4, 4}, 0.0);
    Tensor w({1, 3, 3, 3}, 0.0);
    try {
        conv2d_forward(x, w, Tensor(), {1, 0});
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
    }
    CHECK_THROWS_AS(conv2d_forward(Tensor({1, 1, 2, 2}, 0.0), Tensor({1, 1, 3, 3}, 0.0), Tensor(), {1, 0}),
                    DimensionError);
}

TEST_CASE("backward: linear and quadratic functionals") {
    Var x = Var::leaf(Tensor::from({3}, {1, -2, 3}));
    backward(ops::sum(x));
    for (double g : x.grad().values()) CHECK(g == 1.0);

    Var y = Var::leaf(Tensor::from({3}, {1, -2, 3}));
    backward(ops::scale(ops::sum(ops::square(y)), 0.5));
    CHECK(y.grad()[0] == doctest::Approx(1.0));
    CHECK(y.grad()[1] == doctest::Approx(-2.0));
    CHECK(y.grad()[2] == doctest::Approx(3.0));
}

TEST_CASE("backward rejects non-scalar loss and overwrites parameter grads") {
    Var x = Var::leaf(Tensor({2}, 1.0));
    CHECK_THROWS_AS(backward(x), ContractError);

    Parameter p("p", Tensor::from({2}, {1.0, 2.0}));
    backward(ops::sum(Var::bind(p)));
    backward(ops::sum(Var::bind(p)));
    CHECK(p.grad[0] == 1.0);
    CHECK(p.grad[1] == 1.0);
}

TEST_CASE("conv2d backward matches finite differences") {
    std::mt19937_64 rng(4);
    Tensor x0 = random_tensor({2, 2, 5, 5}, rng);
    Tensor w0 = random_tensor({3, 2, 3, 3}, rng);
    Tensor b0 = random_tensor({3}, rng);
    Tensor r = random_tensor({2, 3, 3, 3}, rng);
    auto loss = [&](const Var& x, const Var& w, const Var& b) {
        return ops::sum(ops::mul(ops::conv2d(x, w, b, {2, 1}), Var::constant(r)));
    };
    Var x = Var::leaf(x0), w = Var::leaf(w0), b = Var::leaf(b0);
    backward(loss(x, w, b));
    auto fx = [&](const Tensor& t) { return loss(Var::constant(t), Var::constant(w0), Var::constant(b0)).value().item(); };
    auto fw = [&](const Tensor& t) { return loss(Var::constant(x0), Var::constant(t), Var::constant(b0)).value().item(); };
    auto fb = [&](const Tensor& t) { return loss(Var::constant(x0), Var::constant(w0), Var::constant(t)).value().item(); };
    CHECK(max_relative_error(x.grad(), finite_diff_check(fx, x0, 1e-5)) < 1e-8);
    CHECK(max_relative_error(w.grad(), finite_diff_check(fw, w0, 1e-5)) < 1e-8);
    CHECK(max_relative_error(b.grad(), finite_diff_check(fb, b0, 1e-5)) < 1e-8);
}

TEST_CASE("elementwise ops, pooling, linear and concat match finite differences") {
    std::mt19937_64 rng(5);
    Tensor a0 = random_tensor({2, 3, 2, 2}, rng);
    Tensor b0 = random_tensor({2, 3, 2, 2}, rng);
    Tensor alpha0 = random_tensor({3}, rng);
    Tensor w0 = random_tensor({4, 6}, rng);
    Tensor bias0 = random_tensor({4}, rng);
    auto f = [&](const Var& a, const Var& b, const Var& al, const Var& w, const Var& bias) {
        Var blend = ops::channel_blend(a, ops::relu(b), al);
        Var feats = ops::concat_features(ops::global_avg_pool(ops::mul(blend, a)),
                                         ops::global_avg_pool(ops::shortcut(ops::add(a, b), 3, 2)));
        return ops::mean(ops::square(ops::linear(feats, w, bias)));
    };
    std::vector<Tensor> pts{a0, b0, alpha0, w0, bias0};
    std::vector<Var> leaves;
    for (auto& p : pts) leaves.push_back(Var::leaf(p));
    backward(f(leaves[0], leaves[1], leaves[2], leaves[3], leaves[4]));
    for (std::size_t which = 0; which < pts.size(); ++which) {
        auto fn = [&](const Tensor& t) {
            std::vector<Var> c;
            for (std::size_t i = 0; i < pts.size(); ++i) c.push_back(Var::constant(i == which ? t : pts[i]));
            return f(c[0], c[1], c[2], c[3], c[4]).value().item();
        };
        CHECK(max_relative_error(leaves[which].grad(), finite_diff_check(fn, pts[which], 1e-6)) < 1e-6);
    }
}

TEST_CASE("backward through a random 3-block Conv-BN-ReLU net matches finite differences") {
    model::ModelConfig cfg;
    cfg.input_shape = {2, 8, 8};
    cfg.channels = {3, 4, 5};
    cfg.n_classes = 3;
    for (bool residual : {false, true}) {
        cfg.residual_connections = residual;
        auto net = model::UniModalModel::init(cfg, "net", residual ? 11 : 12);
        std::mt19937_64 rng(6);
        Tensor x = random_tensor({4, 2, 8, 8}, rng, -3, 3);
        std::vector<int> labels{0, 1, 2, 1};
        auto run = [&]() { return cross_entropy_confidence(net.logits(Var::constant(x), bn::Mode::train), labels).loss; };
        backward(run());
        double worst = 0.0;
        for (Parameter* p : net.parameters()) {
            Tensor analytic = p->grad;
            Tensor saved = p->value;
            auto fn = [&](const Tensor& t) {
                p->value = t;
                double v = run().value().item();
                p->value = saved;
                return v;
            };
            worst = std::max(worst, max_relative_error(analytic, finite_diff_check(fn, saved, 1e-6)));
        }
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("cross_entropy_confidence") {
    SUBCASE("uniform logits") {
        auto r = cross_entropy_confidence(Var::constant(Tensor({5, 4}, 0.7)), {0, 1, 2, 3, 0});
        for (double c : r.confidence) CHECK(c == doctest::Approx(0.25).epsilon(1e-15));
        CHECK(r.loss.value().item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    }
    SUBCASE("saturated") {
        auto r = cross_entropy_confidence(Var::constant(Tensor::from({1, 2}, {10, -10})), {0});
        CHECK(r.confidence[0] > 1.0 - 1e-8);
        CHECK(r.confidence[0] < 1.0);
        CHECK(r.loss.value().item() < 1e-8);
    }
    SUBCASE("three-class hand value") {
        auto r = cross_entropy_confidence(Var::constant(Tensor::from({1, 3}, {1, 2, 3})), {2});
        CHECK(r.confidence[0] == doctest::Approx(0.665240955774821889).epsilon(1e-14));
    }
    SUBCASE("label out of range") {
        CHECK_THROWS_AS(cross_entropy_confidence(Var::constant(Tensor({1, 3}, 0.0)), {3}), IndexError);
        CHECK_THROWS_AS(cross_entropy_confidence(Var::constant(Tensor({1, 3}, 0.0)), {-1}), IndexError);
    }
    SUBCASE("gradient") {
        std::mt19937_64 rng(7);
        Tensor z0 = random_tensor({3, 4}, rng, -5, 5);
        std::vector<int> y{3, 0, 2};
        Var z = Var::leaf(z0);
        backward(cross_entropy_confidence(z, y).loss);
        auto fn = [&](const Tensor& t) { return cross_entropy_confidence(Var::constant(t), y).loss.value().item(); };
        CHECK(max_relative_error(z.grad(), finite_diff_check(fn, z0, 1e-6)) < 1e-7);
    }
}

TEST_CASE("confidences are in (0,1) and average 1/K under uniform logits") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor z = random_tensor({16, 5}, rng, -10, 10);
        std::vector<int> y(16);
        for (auto& v : y) v = static_cast<int>(rng() % 5);
        for (double c : cross_entropy_confidence(Var::constant(z), y).confidence) {
            CHECK(c > 0.0);
            CHECK(c < 1.0);
        }
    }
    auto r = cross_entropy_confidence(Var::constant(Tensor({7, 5}, -3.0)), {0, 1, 2, 3, 4, 0, 1});
    double mean = 0.0;
    for (double c : r.confidence) mean += c / 7.0;
    CHECK(mean == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("sgd_step") {
    SUBCASE("zero learning rate leaves parameters unchanged") {
        Parameter p("p", Tensor::from({2}, {1.0, -2.0}));
        p.grad = Tensor::from({2}, {3.0, 4.0});
        Sgd opt({0.0, 0.9, 0.1});
        opt.step({&p});
        CHECK(p.value == Tensor::from({2}, {1.0, -2.0}));
    }
    SUBCASE("plain gradient step") {
        Parameter p("p", Tensor::from({1}, {1.0}));
        p.grad = Tensor::from({1}, {0.5});
        Sgd opt({0.1, 0.0, 0.0});
        opt.step({&p});
        CHECK(p.value[0] == doctest::Approx(0.95).epsilon(1e-15));
    }
    SUBCASE("momentum unrolls by hand") {
        Parameter p("p", Tensor::from({1}, {0.0}));
        Sgd opt({0.1, 0.9, 0.0});
        p.grad = Tensor::from({1}, {1.0});
        opt.step({&p});
        CHECK(p.value[0] == doctest::Approx(-0.1).epsilon(1e-15));
        opt.step({&p});
        CHECK(p.value[0] == doctest::Approx(-0.29).epsilon(1e-14));
        CHECK(opt.velocity("p")->shape() == p.value.shape());
    }
    SUBCASE("non-finite gradient names the parameter") {
        Parameter p("enc.block0.conv.weight", Tensor({1}, 0.0));
        p.grad = Tensor({1}, std::nan(""));
        Sgd opt;
        try {
            opt.step({&p});
            FAIL("expected NonFiniteError");
        } catch (const NonFiniteError& e) {
            CHECK(std::string(e.what()).find("enc.block0.conv.weight") != std::string::npos);
        }
    }
}

TEST_CASE("finite_diff_check") {
    std::mt19937_64 rng(9);
    Tensor pt = random_tensor({6}, rng);
    auto sum = [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.values()) s += v;
        return s;
    };
    const Tensor numeric = finite_diff_check(sum, pt, 1e-6);
    for (double g : numeric.values()) CHECK(std::abs(g - 1.0) < 1e-9);
    auto sq = [](const Tensor& t) { return t[0] * t[0]; };
    CHECK(std::abs(finite_diff_check(sq, Tensor::from({1}, {3.0}), 1e-4)[0] - 6.0) < 1e-7);
}

TEST_CASE("compute_metrics") {
    SUBCASE("perfect one-hot") {
        Tensor p = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
        auto m = compute_metrics(p, {0, 1, 2});
        CHECK(m.accuracy == 1.0);
        CHECK(m.map == 1.0);
        CHECK_FALSE(m.warning());
    }
    SUBCASE("uniform predictions break ties to class 0") {
        Tensor p({100, 4}, 0.25);
        std::vector<int> y(100);
        for (int i = 0; i < 100; ++i) y[i] = i % 4;
        CHECK(compute_metrics(p, y).accuracy == doctest::Approx(0.25));
    }
    SUBCASE("hand AP case") {
        Tensor p = Tensor::from({4, 2}, {0.1, 0.9, 0.2, 0.8, 0.7, 0.3, 0.9, 0.1});
        std::vector<double> s{0.9, 0.8, 0.3, 0.1};
        std::vector<bool> pos{true, false, true, false};
        CHECK(oracle::average_precision(s, pos) == doctest::Approx(5.0 / 6.0));
        CHECK(average_precision(s, pos) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
        auto m = compute_metrics(p, {1, 0, 1, 0});
        CHECK(m.accuracy == 0.5);
    }
    SUBCASE("absent class is excluded with a warning") {
        Tensor p = Tensor::from({2, 3}, {0.8, 0.1, 0.1, 0.2, 0.7, 0.1});
        auto m = compute_metrics(p, {0, 1});
        CHECK(m.warning());
        CHECK(m.classes_without_positives == std::vector<int>{2});
        CHECK(m.map == 1.0);
    }
    SUBCASE("rows must sum to one") {
        CHECK_THROWS_AS(compute_metrics(Tensor({1, 2}, 0.4), {0}), ContractError);
    }
    SUBCASE("AP matches the pairwise oracle on random rankings with ties") {
        std::mt19937_64 rng(10);
        for (int t = 0; t < 50; ++t) {
            std::vector<double> s(12);
            std::vector<bool> pos(12);
            for (std::size_t i = 0; i < 12; ++i) {
                s[i] = static_cast<double>(rng() % 5);
                pos[i] = rng() % 3 == 0;
            }
            pos[0] = true;
            CHECK(average_precision(s, pos) == doctest::Approx(oracle::average_precision(s, pos)).epsilon(1e-14));
        }
    }
}
