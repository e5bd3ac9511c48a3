#include <cmath>
#include <vector>

#include "doctest.h"
#include "grad_check.hpp"
#include "kwsrl/nn/ops.hpp"
#include "kwsrl/nn/optim.hpp"

using namespace kwsrl;
using namespace kwsrl::nn;
using kwsrl::testing::grad_check;
using kwsrl::testing::random_tensor;

namespace {

constexpr double kOpTolerance = 1e-4;

Tensor<float> tf(Shape s, std::vector<float> v) { return Tensor<float>(std::move(s), std::move(v)); }

}  // namespace

TEST_CASE("dense forward")
{
    Graph<float> g;
    SUBCASE("identity weight")
    {
        auto x = g.constant(Tensor<float>::vector({0.25f, -3.0f, 7.5f}));
        auto w = g.constant(tf({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
        auto b = g.constant(Tensor<float>({3}));
        CHECK(dense(x, w, b).value() == x.value());
    }
    SUBCASE("hand arithmetic")
    {
        auto x = g.constant(Tensor<float>::vector({1, 2}));
        auto w = g.constant(tf({2, 2}, {1, 1, 0, 1}));
        auto b = g.constant(Tensor<float>::vector({0, 1}));
        auto y = dense(x, w, b).value();
        CHECK(y[0] == 3.0f);
        CHECK(y[1] == 3.0f);
    }
    SUBCASE("shape mismatch names both shapes")
    {
        auto x = g.constant(Tensor<float>({3}));
        auto w = g.constant(Tensor<float>({2, 4}));
        auto b = g.constant(Tensor<float>({2}));
        try {
            dense(x, w, b);
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("[3]") != std::string::npos);
            CHECK(msg.find("[2,4]") != std::string::npos);
        }
    }
}

TEST_CASE("dense gradient matches finite differences")
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        const std::size_t in = 2 + rng.below(5), out = 2 + rng.below(5), rows = 1 + rng.below(4);
        auto r = grad_check({random_tensor({rows, in}, rng), random_tensor({out, in}, rng), random_tensor({out}, rng)},
                            [](Graph<double>&, const std::vector<Var<double>>& p) { return dense(p[0], p[1], p[2]); },
                            seed);
        CHECK(r.max_rel_error <= kOpTolerance);
    }
    Rng rng(99);
    auto r = grad_check({random_tensor({3}, rng), random_tensor({4, 3}, rng), random_tensor({4}, rng)},
                        [](Graph<double>&, const std::vector<Var<double>>& p) { return dense(p[0], p[1], p[2]); }, 99);
    CHECK(r.max_rel_error <= kOpTolerance);
}

TEST_CASE("conv1d forward")
{
    Graph<float> g;
    SUBCASE("unit kernel of width one is identity")
    {
        auto x = g.constant(tf({3, 1}, {1, 2, 3}));
        auto k = g.constant(tf({1, 1, 1}, {1}));
        auto b = g.constant(Tensor<float>({1}));
        CHECK(conv1d(x, k, b).value() == x.value());
    }
    SUBCASE("kernel [1,0,0] shifts right with zero padding")
    {
        auto x = g.constant(tf({3, 1}, {1, 2, 3}));
        auto k = g.constant(tf({3, 1, 1}, {1, 0, 0}));
        auto b = g.constant(Tensor<float>({1}));
        CHECK(conv1d(x, k, b).value().storage() == std::vector<float>{0, 1, 2});
    }
    SUBCASE("even kernel is a configuration error")
    {
        auto x = g.constant(Tensor<float>({4, 1}));
        auto k = g.constant(Tensor<float>({2, 1, 1}));
        auto b = g.constant(Tensor<float>({1}));
        CHECK_THROWS_AS(conv1d(x, k, b), ConfigError);
    }
}

TEST_CASE("conv1d gradient matches finite differences")
{
    auto build = [](Graph<double>&, const std::vector<Var<double>>& p) { return conv1d(p[0], p[1], p[2]); };
    {
        Rng rng(3);
        auto r = grad_check({random_tensor({8, 2}, rng), random_tensor({3, 2, 4}, rng), random_tensor({4}, rng)},
                            build, 3);
        CHECK(r.max_rel_error <= kOpTolerance);
    }
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
        Rng rng(seed);
        const std::size_t batch = 1 + rng.below(3), len = 1 + rng.below(7), cin = 1 + rng.below(3),
                          cout = 1 + rng.below(4), k = 1 + 2 * rng.below(3);
        auto r = grad_check({random_tensor({batch, len, cin}, rng), random_tensor({k, cin, cout}, rng),
                             random_tensor({cout}, rng)},
                            build, seed);
        CHECK(r.max_rel_error <= kOpTolerance);
    }
}

TEST_CASE("maxpool1d")
{
    Graph<float> g;
    SUBCASE("window two")
    {
        auto x = g.constant(tf({4, 1}, {1, 3, 2, 0}));
        CHECK(maxpool1d(x, 2).value().storage() == std::vector<float>{3, 2});
    }
    SUBCASE("window one is identity")
    {
        auto x = g.constant(tf({4, 2}, {1, 3, 2, 0, 5, 6, 7, 8}));
        CHECK(maxpool1d(x, 1).value() == x.value());
    }
    SUBCASE("ties route the gradient to the first element")
    {
        Tensor<float> value = tf({2, 1}, {2, 2});
        Tensor<float> sink({2, 1});
        auto x = g.param(value, &sink);
        g.backward(sum(maxpool1d(x, 2)));
        CHECK(sink[0] == 1.0f);
        CHECK(sink[1] == 0.0f);
    }
    SUBCASE("length shorter than window")
    {
        auto x = g.constant(Tensor<float>({1, 1}));
        CHECK_THROWS_AS(maxpool1d(x, 2), ShapeError);
    }
}

TEST_CASE("maxpool1d gradient matches finite differences")
{
    for (std::uint64_t seed = 20; seed < 25; ++seed) {
        Rng rng(seed);
        const std::size_t batch = 1 + rng.below(3), len = 2 + rng.below(7), ch = 1 + rng.below(3);
        auto r = grad_check({random_tensor({batch, len, ch}, rng)},
                            [](Graph<double>&, const std::vector<Var<double>>& p) { return maxpool1d(p[0], 2); },
                            seed);
        CHECK(r.max_rel_error <= kOpTolerance);
    }
}

TEST_CASE("lstm")
{
    SUBCASE("zero weights give a zero hidden state")
    {
        Graph<float> g;
        Rng rng(4);
        Tensor<float> xs({5, 3});
        for (float& v : xs.data()) v = static_cast<float>(rng.uniform(-5, 5));
        auto h = lstm(g.constant(xs), g.constant(Tensor<float>({8, 3})), g.constant(Tensor<float>({8, 2})),
                      g.constant(Tensor<float>({8})));
        for (float v : h.value().data()) CHECK(v == 0.0f);
    }
    SUBCASE("single step matches a hand-computed cell")
    {
        // in = 1, hidden = 2; rows ordered i0 i1 f0 f1 g0 g1 o0 o1.
        const std::vector<double> w = {0.5, -0.3, 0.8, 0.1, -0.6, 0.9, 0.2, -0.4};
        const std::vector<double> b = {0.1, 0.0, 1.0, 1.0, -0.2, 0.3, 0.0, 0.5};
        const double x = 0.7;
        Graph<double> g;
        auto h = lstm(g.constant(Tensor<double>({1, 1}, {x})), g.constant(Tensor<double>({8, 1}, w)),
                      g.constant(Tensor<double>({8, 2})), g.constant(Tensor<double>({8}, b)));
        auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
        for (int u = 0; u < 2; ++u) {
            const double i = sig(w[0 + u] * x + b[0 + u]);
            const double gc = std::tanh(w[4 + u] * x + b[4 + u]);
            const double o = sig(w[6 + u] * x + b[6 + u]);
            const double c = i * gc;  // c_0 = 0, so the forget gate drops out.
            CHECK(h.value()[u] == doctest::Approx(o * std::tanh(c)).epsilon(1e-12));
        }
    }
}

TEST_CASE("lstm gradient matches finite differences through several steps")
{
    for (std::uint64_t seed = 30; seed < 35; ++seed) {
        Rng rng(seed);
        const std::size_t steps = 3 + rng.below(2), in = 1 + rng.below(3), hidden = 1 + rng.below(3);
        auto r = grad_check({random_tensor({steps, in}, rng), random_tensor({4 * hidden, in}, rng),
                             random_tensor({4 * hidden, hidden}, rng), random_tensor({4 * hidden}, rng)},
                            [](Graph<double>&, const std::vector<Var<double>>& p) {
                                return lstm(p[0], p[1], p[2], p[3]);
                            },
                            seed);
        CHECK(r.max_rel_error <= kOpTolerance);
    }
}

namespace {

// The recurrence spelled out with primitive ops; an independent reference
// for the fused lstm.
Var<double> lstm_from_primitives(Var<double> xs, Var<double> w, Var<double> u, Var<double> b)
{
    const std::size_t hidden = u.value().dim(1), steps = xs.value().dim(0);
    Var<double> proj = dense(xs, w, b);
    Var<double> h{}, c{};
    for (std::size_t t = 0; t < steps; ++t) {
        Var<double> z = row(proj, t);
        if (t > 0) z = add(z, matvec(u, h));
        auto i = sigmoid(slice(z, 0, hidden));
        auto f = sigmoid(slice(z, hidden, hidden));
        auto cand = nn::tanh(slice(z, 2 * hidden, hidden));
        auto o = sigmoid(slice(z, 3 * hidden, hidden));
        c = t > 0 ? add(mul(f, c), mul(i, cand)) : mul(i, cand);
        h = mul(o, nn::tanh(c));
    }
    return h;
}

}  // namespace

TEST_CASE("lstm agrees with the primitive-op recurrence, batched or not")
{
    for (std::uint64_t seed = 60; seed < 65; ++seed) {
        Rng rng(seed);
        const std::size_t batch = 2 + rng.below(3), steps = 1 + rng.below(5), in = 1 + rng.below(4),
                          hidden = 1 + rng.below(4);
        auto xs = random_tensor({batch, steps, in}, rng, -2, 2);
        auto w = random_tensor({4 * hidden, in}, rng);
        auto u = random_tensor({4 * hidden, hidden}, rng);
        auto b = random_tensor({4 * hidden}, rng);
        Graph<double> g;
        Tensor<double> gw_fused({4 * hidden, in}), gu_fused({4 * hidden, hidden}), gb_fused({4 * hidden});
        auto fused = lstm(g.constant(xs), g.param(w, &gw_fused), g.param(u, &gu_fused), g.param(b, &gb_fused));
        REQUIRE(fused.shape() == Shape{batch, hidden});
        g.backward(sum(fused));

        Tensor<double> gw_ref({4 * hidden, in}), gu_ref({4 * hidden, hidden}), gb_ref({4 * hidden});
        for (std::size_t n = 0; n < batch; ++n) {
            Graph<double> r;
            Tensor<double> seq({steps, in});
            std::copy_n(xs.data().begin() + static_cast<std::ptrdiff_t>(n * steps * in), steps * in,
                        seq.data().begin());
            auto h = lstm_from_primitives(r.constant(seq), r.param(w, &gw_ref), r.param(u, &gu_ref),
                                          r.param(b, &gb_ref));
            r.backward(sum(h));
            Graph<double> single;
            auto hs = lstm(single.constant(seq), single.constant(w), single.constant(u), single.constant(b));
            for (std::size_t j = 0; j < hidden; ++j) {
                CHECK(fused.value().at(n, j) == doctest::Approx(h.value()[j]).epsilon(1e-12));
                CHECK(hs.value()[j] == doctest::Approx(h.value()[j]).epsilon(1e-12));
            }
        }
        for (auto [a, e] : {std::pair{&gw_fused, &gw_ref}, std::pair{&gu_fused, &gu_ref}, std::pair{&gb_fused, &gb_ref}})
            for (std::size_t i = 0; i < a->size(); ++i) CHECK((*a)[i] == doctest::Approx((*e)[i]).epsilon(1e-10));
    }
}

TEST_CASE("batched lstm gradient matches finite differences")
{
    for (std::uint64_t seed = 70; seed < 75; ++seed) {
        Rng rng(seed);
        const std::size_t batch = 2 + rng.below(2), steps = 2 + rng.below(3), in = 1 + rng.below(3),
                          hidden = 1 + rng.below(3);
        auto r = grad_check({random_tensor({batch, steps, in}, rng), random_tensor({4 * hidden, in}, rng),
                             random_tensor({4 * hidden, hidden}, rng), random_tensor({4 * hidden}, rng)},
                            [](Graph<double>&, const std::vector<Var<double>>& p) {
                                return lstm(p[0], p[1], p[2], p[3]);
                            },
                            seed);
        CHECK(r.max_rel_error <= kOpTolerance);
    }
}

TEST_CASE("elementwise and structural ops pass gradient checks")
{
    for (std::uint64_t seed = 40; seed < 45; ++seed) {
        Rng rng(seed);
        const std::size_t n = 2 + rng.below(6);
        auto r = grad_check(
            {random_tensor({n}, rng, -2, 2), random_tensor({n}, rng, -2, 2)},
            [n](Graph<double>&, const std::vector<Var<double>>& p) {
                auto a = add(mul(sigmoid(p[0]), nn::tanh(p[1])), relu(scale(p[0], 1.5)));
                auto m = reshape(a, {1, n});
                return slice(row(m, 0), 1, n - 1);
            },
            seed);
        CHECK(r.max_rel_error <= kOpTolerance);
    }
}

TEST_CASE("softmax")
{
    Graph<double> g;
    SUBCASE("symmetric logits")
    {
        auto p = softmax(g.constant(Tensor<double>::vector({0, 0}))).value();
        CHECK(p[0] == doctest::Approx(0.5));
        CHECK(p[1] == doctest::Approx(0.5));
    }
    SUBCASE("large logits do not overflow")
    {
        auto p = softmax(g.constant(Tensor<double>::vector({1000, 0}))).value();
        CHECK(std::isfinite(p[0]));
        CHECK(p[0] == doctest::Approx(1.0));
        CHECK(p[1] == doctest::Approx(0.0));
    }
    SUBCASE("shift invariance, normalization and argmax preservation")
    {
        Rng rng(7);
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t n = 1 + rng.below(30);
            Tensor<double> logits({n});
            for (double& v : logits.data()) v = rng.uniform(-50, 50);
            Tensor<double> shifted = logits;
            const double c = rng.uniform(-100, 100);
            for (double& v : shifted.data()) v += c;
            auto p = softmax_values(logits);
            auto q = softmax_values(shifted);
            double total = 0;
            for (std::size_t i = 0; i < n; ++i) {
                total += p[i];
                CHECK(std::abs(p[i] - q[i]) <= 1e-6);
            }
            CHECK(std::abs(total - 1.0) <= 1e-6);
            const auto arg = [](const Tensor<double>& t) {
                return std::max_element(t.data().begin(), t.data().end()) - t.data().begin();
            };
            CHECK(arg(p) == arg(logits));
        }
    }
}

TEST_CASE("cross entropy")
{
    Graph<double> g;
    CHECK(cross_entropy(g.constant(Tensor<double>::vector({1, 0})), 0).value()[0] == doctest::Approx(0.0));
    CHECK(cross_entropy(g.constant(Tensor<double>::vector({0.5, 0.5})), 1).value()[0] ==
          doctest::Approx(0.6931471805599453));
    CHECK_THROWS_AS(cross_entropy(g.constant(Tensor<double>::vector({0.5, 0.5})), 2), ShapeError);

    for (std::uint64_t seed = 50; seed < 55; ++seed) {
        Rng rng(seed);
        const std::size_t n = 2 + rng.below(6);
        const std::size_t target = rng.below(n);
        auto r = grad_check({random_tensor({n}, rng, -3, 3)},
                            [target](Graph<double>&, const std::vector<Var<double>>& p) {
                                return cross_entropy(softmax(p[0]), target);
                            },
                            seed);
        CHECK(r.max_rel_error <= kOpTolerance);
    }
}

TEST_CASE("row-wise softmax and batched cross entropy")
{
    Graph<double> g;
    auto logits = g.constant(Tensor<double>({2, 3}, {1, 2, 3, -1, 0, 50}));
    auto p = softmax(logits);
    auto first = softmax_values(Tensor<double>::vector({1, 2, 3}));
    for (std::size_t i = 0; i < 3; ++i) CHECK(p.value().at(0, i) == doctest::Approx(first[i]).epsilon(1e-15));
    CHECK(p.value().at(1, 2) == doctest::Approx(1.0));

    const std::vector<std::size_t> targets = {2, 0};
    const double expected = 0.5 * (-std::log(first[2]) - std::log(p.value().at(1, 0) + 1e-12));
    CHECK(cross_entropy(p, targets).value()[0] == doctest::Approx(expected).epsilon(1e-12));
    const std::vector<std::size_t> wrong = {2, 3};
    CHECK_THROWS_AS(cross_entropy(p, wrong), ShapeError);
    const std::vector<std::size_t> too_few = {1};
    CHECK_THROWS_AS(cross_entropy(p, too_few), ShapeError);

    for (std::uint64_t seed = 80; seed < 85; ++seed) {
        Rng rng(seed);
        const std::size_t rows = 1 + rng.below(4), n = 2 + rng.below(4);
        std::vector<std::size_t> t(rows);
        for (auto& v : t) v = rng.below(n);
        auto r = grad_check({random_tensor({rows, n}, rng, -3, 3)},
                            [t](Graph<double>&, const std::vector<Var<double>>& p) {
                                return cross_entropy(softmax(p[0]), std::span<const std::size_t>(t));
                            },
                            seed);
        CHECK(r.max_rel_error <= kOpTolerance);
        auto s = grad_check({random_tensor({rows, n}, rng, -3, 3)},
                            [](Graph<double>&, const std::vector<Var<double>>& p) { return softmax(p[0]); }, seed);
        CHECK(s.max_rel_error <= kOpTolerance);
    }
}

TEST_CASE("huber")
{
    Graph<double> g;
    CHECK(huber(g.constant(Tensor<double>::vector({0.5})), Tensor<double>::vector({0.0}), 1.0).value()[0] ==
          doctest::Approx(0.125));
    CHECK(huber(g.constant(Tensor<double>::vector({2.0})), Tensor<double>::vector({0.0}), 1.0).value()[0] ==
          doctest::Approx(1.5));
    CHECK_THROWS_AS(huber(g.constant(Tensor<double>({2})), Tensor<double>({3}), 1.0), ShapeError);

    SUBCASE("gradient is clipped to delta over the element count")
    {
        Rng rng(8);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t n = 1 + rng.below(10);
            Tensor<double> pred = random_tensor({n}, rng, -50, 50);
            Tensor<double> target = random_tensor({n}, rng, -50, 50);
            Tensor<double> sink({n});
            Graph<double> gg;
            gg.backward(huber(gg.param(pred, &sink), target, 1.0));
            for (double v : sink.data()) CHECK(std::abs(v) <= 1.0 / static_cast<double>(n) + 1e-15);
        }
    }
    SUBCASE("gradient matches finite differences")
    {
        for (std::uint64_t seed = 60; seed < 65; ++seed) {
            Rng rng(seed);
            const std::size_t n = 1 + rng.below(6);
            const Tensor<double> target = random_tensor({n}, rng, -3, 3);
            auto r = grad_check({random_tensor({n}, rng, -3, 3)},
                                [&target](Graph<double>&, const std::vector<Var<double>>& p) {
                                    return huber(p[0], target, 1.0);
                                },
                                seed);
            CHECK(r.max_rel_error <= kOpTolerance);
        }
    }
}

TEST_CASE("dropout")
{
    Graph<float> g;
    Rng rng(11);
    auto x = g.constant(Tensor<float>({100}, 1.0f));
    CHECK(dropout(x, 0.3, false, &rng).value() == x.value());
    CHECK(dropout(x, 0.0, true, &rng).value() == x.value());
    CHECK_THROWS_AS(dropout(x, 1.0, true, &rng), ConfigError);

    SUBCASE("inverted scaling keeps the mean")
    {
        auto big = g.constant(Tensor<float>({100000}, 1.0f));
        auto y = dropout(big, 0.3, true, &rng).value();
        double total = 0;
        for (float v : y.data()) total += v;
        CHECK(std::abs(total / 100000.0 - 1.0) <= 0.01);
    }
    SUBCASE("gradient uses the same mask")
    {
        for (std::uint64_t seed = 70; seed < 75; ++seed) {
            Rng init(seed);
            auto r = grad_check({random_tensor({12}, init)},
                                [seed](Graph<double>&, const std::vector<Var<double>>& p) {
                                    Rng mask_rng(seed);
                                    return dropout(p[0], 0.3, true, &mask_rng);
                                },
                                seed);
            CHECK(r.max_rel_error <= kOpTolerance);
        }
    }
}

TEST_CASE("fan-out gradients accumulate")
{
    Graph<double> g;
    Tensor<double> value = Tensor<double>::vector({3.0});
    Tensor<double> sink({1});
    auto x = g.param(value, &sink);
    g.backward(sum(add(x, x)));
    CHECK(sink[0] == 2.0);
}

TEST_CASE("constants receive no gradient work")
{
    Graph<double> g;
    auto a = g.constant(Tensor<double>::vector({1.0, 2.0}));
    auto y = sum(nn::tanh(a));
    CHECK_FALSE(g.requires_grad(y));
}

TEST_CASE("optimizers")
{
    SUBCASE("sgd step")
    {
        Tensor<double> p = Tensor<double>::vector({1.0});
        Tensor<double> grad = Tensor<double>::vector({0.5});
        auto opt = Optimizer<double>::sgd(0.1);
        Tensor<double>* ps[] = {&p};
        const Tensor<double>* gs[] = {&grad};
        opt.step(ps, gs);
        CHECK(p[0] == doctest::Approx(0.95));
    }
    SUBCASE("adam first step moves by the learning rate against the gradient sign")
    {
        Tensor<double> p = Tensor<double>::vector({1.0, -2.0, 0.5});
        Tensor<double> grad = Tensor<double>::vector({0.3, -7.0, 1e-3});
        auto opt = Optimizer<double>::adam(0.01);
        Tensor<double>* ps[] = {&p};
        const Tensor<double>* gs[] = {&grad};
        opt.step(ps, gs);
        CHECK(p[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
        CHECK(p[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
        CHECK(p[2] == doctest::Approx(0.5 - 0.01).epsilon(1e-4));
        CHECK(opt.first_moments().front().shape() == p.shape());
    }
    SUBCASE("zero gradient leaves parameters unchanged")
    {
        for (auto opt : {Optimizer<float>::sgd(0.1), Optimizer<float>::adam(0.1)}) {
            Tensor<float> p = Tensor<float>::vector({1.5f, -0.25f});
            const Tensor<float> before = p;
            Tensor<float> grad({2});
            Tensor<float>* ps[] = {&p};
            const Tensor<float>* gs[] = {&grad};
            for (int i = 0; i < 3; ++i) opt.step(ps, gs);
            CHECK(p == before);
        }
    }
    SUBCASE("gradient shape mismatch")
    {
        Tensor<float> p({2});
        Tensor<float> grad({3});
        auto opt = Optimizer<float>::sgd(0.1);
        Tensor<float>* ps[] = {&p};
        const Tensor<float>* gs[] = {&grad};
        CHECK_THROWS_AS(opt.step(ps, gs), ShapeError);
    }
}
