#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "kwsrl/error.hpp"
#include "kwsrl/nn/ops.hpp"
#include "kwsrl/rl.hpp"
#include "test_util.hpp"

using namespace kwsrl;
using namespace kwsrl::rl;
using kwsrl::testing::TempDir;
using policy::Architecture;
using policy::PolicyParams;

namespace {

Architecture tiny(std::size_t classes = 2)
{
    Architecture a;
    a.n_mfcc = 6;
    a.n_frames = 4;
    a.num_classes = classes;
    a.conv1_filters = 3;
    a.conv2_filters = 2;
    a.lstm_hidden = 3;
    a.dense_units = {4, 3};
    return a;
}

std::vector<dsp::LabeledFeatures> random_pool(std::size_t n, std::size_t classes, std::uint64_t seed,
                                              std::size_t n_mfcc = 6, std::size_t frames = 4)
{
    Rng rng(seed);
    std::vector<dsp::LabeledFeatures> pool(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& fm = pool[i].features;
        fm.n_mfcc = n_mfcc;
        fm.n_frames = frames;
        fm.coeffs.resize(n_mfcc * frames);
        for (float& v : fm.coeffs) v = static_cast<float>(rng.uniform(-3, 3));
        pool[i].label = i % classes;
    }
    return pool;
}

EpisodeHistory full_history(std::span<const std::size_t> states, std::span<const std::size_t> actions,
                            std::span<const dsp::LabeledFeatures> pool, double gamma)
{
    EpisodeHistory h;
    for (std::size_t t = 0; t < states.size(); ++t)
        h.record(states[t], actions[t], reward(actions[t], pool[states[t]].label));
    h.finish(gamma);
    return h;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("reward")
{
    CHECK(reward(3, 3) == 1);
    CHECK(reward(3, 4) == -1);
}

TEST_CASE("discounted returns")
{
    const std::vector<int> r = {1, -1, 1};
    const auto g = discounted_returns(r, 0.9);
    REQUIRE(g.size() == 3);
    CHECK(g[0] == doctest::Approx(0.91).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(-0.10).epsilon(1e-12));
    CHECK(g[2] == doctest::Approx(1.00).epsilon(1e-12));

    const auto zero = discounted_returns(r, 0.0);
    for (std::size_t t = 0; t < r.size(); ++t) CHECK(zero[t] == r[t]);

    const std::vector<int> ones(50, 1);
    const auto series = discounted_returns(ones, 1.0);
    for (std::size_t t = 0; t < 50; ++t) CHECK(series[t] == static_cast<double>(50 - t));

    // |G_t| <= (1 - gamma^(n - t)) / (1 - gamma)
    Rng rng(5);
    std::vector<int> mixed(50);
    for (int& v : mixed) v = rng.uniform() < 0.5 ? 1 : -1;
    const auto gm = discounted_returns(mixed, 0.99);
    for (std::size_t t = 0; t < 50; ++t) CHECK(std::abs(gm[t]) <= (1 - std::pow(0.99, 50.0 - t)) / 0.01 + 1e-9);

    CHECK_THROWS_AS(discounted_returns(std::vector<int>{}, 0.9), LogicError);
}

TEST_CASE("environment draws, steps and ends")
{
    const auto pool = random_pool(120, 2, 1);
    Environment env(pool, 50);
    CHECK_THROWS_AS(env.step(0), LogicError);

    Rng a(9), b(9);
    env.reset(a);
    const std::vector<std::size_t> first(env.drawn().begin(), env.drawn().end());
    Environment other(pool, 50);
    other.reset(b);
    CHECK(std::equal(first.begin(), first.end(), other.drawn().begin(), other.drawn().end()));

    std::vector<std::size_t> sorted = first;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    CHECK(sorted.back() < pool.size());

    int sum = 0;
    for (std::size_t t = 0; t < 50; ++t) {
        CHECK(!env.done());
        CHECK(env.cursor() == t);
        const StepResult r = env.step(pool[env.state_index()].label);
        sum += r.reward;
        CHECK(r.done == (t == 49));
    }
    CHECK(sum == 50);
    CHECK(env.done());
    CHECK_THROWS_AS(env.step(0), LogicError);
    CHECK_THROWS_AS(env.state_index(), LogicError);

    CHECK_THROWS_AS(Environment(std::span(pool).first(49), 50), DatasetError);
}

TEST_CASE("episode accuracy equals (sum of rewards + eta) / (2 eta) over random episodes")
{
    Rng rng(2024);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t classes = 2 + rng.below(29);
        const std::size_t eta = 1 + rng.below(80);
        const auto pool = random_pool(eta + rng.below(40), classes, rng.next(), 1, 1);
        Environment env(pool, eta);
        env.reset(rng);
        EpisodeHistory h;
        while (!env.done()) {
            const std::size_t s = env.state_index();
            const std::size_t a = rng.uniform() < 0.5 ? pool[s].label : rng.below(classes);
            h.record(s, a, env.step(a).reward);
        }
        const double acc = static_cast<double>(h.correct()) / static_cast<double>(eta);
        CHECK(acc == (h.reward_sum() + static_cast<double>(eta)) / (2.0 * static_cast<double>(eta)));
    }
    CHECK(40.0 / 50.0 == 0.8);
}

TEST_CASE("trainer episodes report consistent accuracy")
{
    const auto pool = random_pool(80, 3, 4);
    RLConfig cfg;
    cfg.eta = 10;
    cfg.sync_interval = 3;
    Trainer trainer(cfg, policy::init_params(tiny(3), 1), pool);
    for (int e = 1; e <= 7; ++e) {
        const EpisodeOutcome out = trainer.run_episode();
        CHECK(out.episode == static_cast<std::size_t>(e));
        CHECK(out.accuracy == (out.reward_sum + 10.0) / 20.0);
        CHECK(out.synced == (e % 3 == 0));
        CHECK(std::isfinite(out.loss));
    }
}

TEST_CASE("batch partitioning")
{
    const auto b = batch_ranges(17, 8);
    REQUIRE(b.size() == 3);
    CHECK(b[0] == std::pair<std::size_t, std::size_t>{0, 8});
    CHECK(b[1] == std::pair<std::size_t, std::size_t>{8, 16});
    CHECK(b[2] == std::pair<std::size_t, std::size_t>{16, 17});
    CHECK(batch_ranges(0, 8).empty());
    CHECK_THROWS_AS(batch_ranges(3, 0), ConfigError);
}

TEST_CASE("regression targets replace the taken action's entry")
{
    nn::Tensor<double> probs({2, 3}, {0.2, 0.3, 0.5, 0.6, 0.3, 0.1});
    const std::vector<std::size_t> actions = {2, 0};
    const std::vector<double> returns = {1.5, -0.25};
    const auto y = regression_targets(probs, actions, returns);
    const std::vector<double> expected = {0.2, 0.3, 1.5, -0.25, 0.3, 0.1};
    for (std::size_t i = 0; i < 6; ++i) CHECK(y[i] == expected[i]);
    CHECK_THROWS_AS(regression_targets(probs, std::vector<std::size_t>{3, 0}, returns), LogicError);
    CHECK_THROWS_AS(regression_targets(probs, std::vector<std::size_t>{0}, returns), ShapeError);
}

TEST_CASE("fixed point of the update: zero loss and no parameter change")
{
    Architecture a = tiny();
    a.dropout_rate = 0.0;
    const auto pool = random_pool(12, 2, 3);
    RLConfig cfg;
    cfg.eta = 6;
    PolicyPair pair(policy::init_params(a, 2));
    const std::vector<std::size_t> states = {0, 3, 5, 7, 8, 11};
    const std::vector<std::size_t> actions = {1, 0, 0, 1, 1, 0};

    // Returns chosen to equal the target's own outputs at the taken actions.
    EpisodeHistory h = full_history(states, actions, pool, cfg.gamma);
    for (std::size_t t = 0; t < states.size(); ++t)
        h.returns[t] = policy::forward(pair.target(), pool[states[t]].features, false, nullptr)[actions[t]];

    const PolicyParams before = pair.policy();
    auto opt = nn::Optimizer<float>::adam(cfg.rl_lr);
    Rng dropout(1);
    CHECK(train_episode(pair, h, pool, cfg, opt, dropout) == 0.0);
    CHECK(pair.policy() == before);
    CHECK(pair.target() == before);
}

TEST_CASE("single-step episode loss equals a hand Huber value")
{
    // Zero head weights make the output [0.8, 0.2] whatever the state.
    PolicyParams p = policy::init_params(tiny(), 5);
    p["head.weight"].fill(0.0f);
    p["head.bias"][0] = static_cast<float>(std::log(0.8));
    p["head.bias"][1] = static_cast<float>(std::log(0.2));
    PolicyPair pair(p);
    const auto pool = random_pool(4, 2, 8);
    RLConfig cfg;
    cfg.eta = 1;

    // state 1 has label 1; acting 0 earns -1, so G = -1
    const std::vector<std::size_t> s = {1}, a = {0};
    const EpisodeHistory h = full_history(s, a, pool, cfg.gamma);
    REQUIRE(h.returns[0] == -1.0);
    // entries: |0.8 - (-1)| = 1.8 -> 1.8 - 0.5 = 1.3; |0.2 - 0.2| = 0; mean 0.65
    auto opt = nn::Optimizer<float>::adam(cfg.rl_lr);
    Rng dropout(2);
    const PolicyParams target_before = pair.target();
    CHECK(train_episode(pair, h, pool, cfg, opt, dropout) == doctest::Approx(0.65).epsilon(1e-6));
    CHECK(pair.target() == target_before);
    CHECK(!(pair.policy() == target_before));
}

TEST_CASE("episode loss gradient w.r.t. head bias matches finite differences")
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto pool = random_pool(10, 3, seed);
        const auto params = policy::init_params(tiny(3), seed).cast<double>();
        const std::vector<std::size_t> states = {0, 2, 4, 5, 9}, actions = {0, 2, 1, 1, 0};
        const EpisodeHistory h = full_history(states, actions, pool, 0.99);
        std::vector<const dsp::FeatureMatrix*> ptrs;
        for (std::size_t s : states) ptrs.push_back(&pool[s].features);
        const auto x = policy::state_batch<double>(ptrs);

        nn::Graph<double> tg;
        const auto target_probs = policy::build_network<double>(tg, params, x, false, nullptr).probs.value();
        const auto y = regression_targets(target_probs, actions, h.returns);

        // Dropout active: every evaluation replays the same mask.
        auto loss_at = [&](const policy::Params<double>& p, policy::Params<double>* sinks) {
            Rng dropout(seed * 31);
            nn::Graph<double> g;
            auto loss = episode_loss<double>(g, p, x, y, 1.0, &dropout, sinks);
            if (sinks) g.backward(loss);
            return loss.value()[0];
        };
        auto grads = policy::Params<double>::zeros(params.arch);
        loss_at(params, &grads);
        for (std::size_t c = 0; c < 3; ++c) {
            auto up = params, down = params;
            const double step = 1e-6;
            up["head.bias"][c] += step;
            down["head.bias"][c] -= step;
            const double numeric = (loss_at(up, nullptr) - loss_at(down, nullptr)) / (2 * step);
            const double analytic = grads["head.bias"][c];
            const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            CHECK(rel <= 1e-3);
        }
    }
}

TEST_CASE("incomplete history is rejected")
{
    const auto pool = random_pool(10, 2, 1);
    RLConfig cfg;
    cfg.eta = 3;
    PolicyPair pair(policy::init_params(tiny(), 1));
    auto opt = nn::Optimizer<float>::adam(cfg.rl_lr);
    Rng dropout(1);
    EpisodeHistory h;
    h.record(0, 0, 1);
    h.record(1, 0, -1);
    h.finish(cfg.gamma);
    CHECK_THROWS_AS(train_episode(pair, h, pool, cfg, opt, dropout), LogicError);
    h.record(2, 0, 1);
    CHECK_THROWS_AS(train_episode(pair, h, pool, cfg, opt, dropout), LogicError);  // no returns for step 3
}

TEST_CASE("a NaN parameter aborts the run")
{
    const auto pool = random_pool(20, 2, 1);
    RLConfig cfg;
    cfg.eta = 5;
    PolicyParams p = policy::init_params(tiny(), 1);
    p["head.bias"][0] = std::numeric_limits<float>::quiet_NaN();
    Trainer trainer(cfg, p, pool);
    CHECK_THROWS_AS(trainer.run_episode(), NumericError);
}

TEST_CASE("pool labels must fit the model")
{
    const auto pool = random_pool(20, 3, 1);
    RLConfig cfg;
    cfg.eta = 5;
    CHECK_THROWS_AS(Trainer(cfg, policy::init_params(tiny(2), 1), pool), DatasetError);
}

TEST_CASE("target sync contract on a two-parameter stub")
{
    using Stub = std::array<double, 2>;
    policy::ModelPair<Stub> pair(Stub{0.5, -1.0});
    TargetSync sync(4);
    Rng rng(3);
    Stub last_target = pair.target();
    for (std::size_t episode = 1; episode <= 25; ++episode) {
        for (double& w : pair.policy()) w -= 0.1 * rng.uniform(-1, 1);
        if (sync.due(episode)) {
            pair.sync();
            CHECK(pair.target() == pair.policy());
            last_target = pair.target();
        } else {
            CHECK(std::memcmp(pair.target().data(), last_target.data(), sizeof(Stub)) == 0);
            CHECK(pair.target() != pair.policy());
        }
    }
    CHECK(!sync.due(0));
    CHECK_THROWS_AS(TargetSync(0), ConfigError);
}

TEST_CASE("trainer keeps the target frozen between syncs")
{
    const auto pool = random_pool(40, 2, 6);
    RLConfig cfg;
    cfg.eta = 8;
    cfg.sync_interval = 3;
    cfg.rl_lr = 1e-2;
    Trainer trainer(cfg, policy::init_params(tiny(), 3), pool);
    PolicyParams frozen = trainer.models().target();
    for (int e = 1; e <= 9; ++e) {
        const EpisodeOutcome out = trainer.run_episode();
        if (out.synced) {
            CHECK(trainer.models().target() == trainer.models().policy());
            frozen = trainer.models().target();
        } else {
            CHECK(trainer.models().target() == frozen);
            CHECK(!(trainer.models().policy() == frozen));
        }
    }
}

TEST_CASE("identical seeds give identical runs")
{
    const auto pool = random_pool(60, 2, 7);
    RLConfig cfg;
    cfg.eta = 10;
    cfg.num_episodes = 5;
    cfg.seed = 11;
    for (ActionMode mode : {ActionMode::argmax, ActionMode::sample}) {
        cfg.action_mode = mode;
        std::vector<double> a, b;
        run(cfg, policy::init_params(tiny(), 1), pool, [&](const EpisodeOutcome& o) { a.push_back(o.loss); });
        run(cfg, policy::init_params(tiny(), 1), pool, [&](const EpisodeOutcome& o) { b.push_back(o.loss); });
        CHECK(a == b);
        CHECK(a.size() == 5);
    }
    CHECK(parse_action_mode("sample") == ActionMode::sample);
    CHECK_THROWS_AS(parse_action_mode("greedy"), ConfigError);
}

TEST_CASE("pretraining separates two constant inputs")
{
    Architecture a;
    a.n_frames = 8;
    std::vector<dsp::LabeledFeatures> data(80);
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto& fm = data[i].features;
        fm.n_mfcc = a.n_mfcc;
        fm.n_frames = a.n_frames;
        data[i].label = i % 2;
        fm.coeffs.assign(a.n_mfcc * a.n_frames, data[i].label ? 10.0f : -10.0f);
    }
    RLConfig cfg;
    std::vector<EpochMetrics> seen;
    const auto result = pretrain(policy::init_params(a, 4), data, cfg, [&](const EpochMetrics& m) { seen.push_back(m); });
    REQUIRE(result.epochs.size() == 10);
    CHECK(seen.size() == 10);
    for (const auto& m : result.epochs) CHECK(std::isfinite(m.train_loss));
    CHECK(result.epochs.back().train_loss < result.epochs.front().train_loss);

    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    CHECK(evaluate(result.params, data, all).second == 1.0);

    auto one_class = data;
    for (auto& item : one_class) item.label = 0;
    CHECK_THROWS_AS(pretrain(policy::init_params(a, 4), one_class, cfg), DatasetError);
}

TEST_CASE("checkpoint probe: byte-stable round trip and exact predictions in the runner")
{
    TempDir dir("rl-ckpt");
    const auto pool = random_pool(30, 2, 12);
    RLConfig cfg;
    cfg.eta = 10;
    cfg.pretrain_epochs = 2;
    const auto trained = pretrain(policy::init_params(tiny(), 8), pool, cfg).params;

    const auto first = dir.path() / "a.ckpt", second = dir.path() / "b.ckpt";
    policy::save_checkpoint(trained, first);
    const PolicyParams loaded = policy::load_checkpoint(first, tiny());
    policy::save_checkpoint(loaded, second);
    CHECK(slurp(first) == slurp(second));
    CHECK(loaded == trained);

    Trainer trainer(cfg, policy::load_checkpoint(first), pool);
    std::vector<const dsp::FeatureMatrix*> probe;
    for (const auto& item : pool) probe.push_back(&item.features);
    const auto direct = policy::forward_batch(loaded, probe, false, nullptr);
    const auto via_runner = trainer.predict(probe);
    CHECK(std::memcmp(direct.data().data(), via_runner.data().data(), direct.size() * sizeof(float)) == 0);
}
