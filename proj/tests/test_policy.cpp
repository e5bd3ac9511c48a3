#include <cmath>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "grad_check.hpp"
#include "kwsrl/error.hpp"
#include "kwsrl/policy.hpp"
#include "test_util.hpp"

using namespace kwsrl;
using namespace kwsrl::policy;
using kwsrl::testing::TempDir;
namespace fs = std::filesystem;

namespace {

dsp::FeatureMatrix random_features(std::size_t n_mfcc, std::size_t frames, std::uint64_t seed)
{
    Rng rng(seed);
    dsp::FeatureMatrix fm;
    fm.n_mfcc = n_mfcc;
    fm.n_frames = frames;
    fm.coeffs.resize(n_mfcc * frames);
    for (float& v : fm.coeffs) v = static_cast<float>(rng.uniform(-30, 30));
    return fm;
}

Architecture tiny()
{
    Architecture a;
    a.n_mfcc = 6;
    a.n_frames = 4;
    a.num_classes = 2;
    a.conv1_filters = 3;
    a.conv2_filters = 2;
    a.lstm_hidden = 3;
    a.dense_units = {4, 3};
    return a;
}

}  // namespace

TEST_CASE("parameter count matches a hand sum")
{
    // conv1 3*1*16+16, conv2 3*16*8+8, lstm 4*50*(160+50)+200,
    // dense 50->512->256->64, head 64->2
    const std::size_t hand = (48 + 16) + (384 + 8) + (200 * 160 + 200 * 50 + 200) + (50 * 512 + 512) +
                             (512 * 256 + 256) + (256 * 64 + 64) + (64 * 2 + 2);
    CHECK(hand == 216674);
    CHECK(parameter_count(Architecture{}) == hand);
    CHECK(init_params(Architecture{}, 1).scalar_count() == hand);

    Architecture thirty;
    thirty.num_classes = 30;
    CHECK(parameter_count(thirty) == hand + 28 * 65);
}

TEST_CASE("architecture validation and text form")
{
    Architecture a;
    CHECK(Architecture::parse(a.describe()) == a);
    Architecture t = tiny();
    t.dropout_rate = 0.125;
    CHECK(Architecture::parse(t.describe()) == t);
    Architecture none = tiny();
    none.dense_units.clear();
    CHECK(Architecture::parse(none.describe()) == none);

    auto bad = [](auto mutate) {
        Architecture x;
        mutate(x);
        CHECK_THROWS_AS(x.validate(), ConfigError);
    };
    bad([](Architecture& x) { x.num_classes = 1; });
    bad([](Architecture& x) { x.kernel_size = 4; });
    bad([](Architecture& x) { x.dropout_rate = 1.0; });
    bad([](Architecture& x) { x.pool_window = 41; });
    bad([](Architecture& x) { x.dense_units = {0}; });
    CHECK_THROWS_AS(Architecture::parse("n_mfcc=forty"), FormatError);
    CHECK_THROWS_AS(Architecture::parse("colour=blue"), FormatError);
}

TEST_CASE("initialization")
{
    const auto a = init_params(Architecture{}, 3);
    const auto b = init_params(Architecture{}, 3);
    const auto c = init_params(Architecture{}, 4);
    CHECK(a == b);
    CHECK(!(a == c));
    const auto& bias = a["lstm.bias"];
    for (std::size_t i = 0; i < bias.size(); ++i) CHECK(bias[i] == (i >= 50 && i < 100 ? 1.0f : 0.0f));
    const float limit = static_cast<float>(std::sqrt(6.0 / (50 + 512)));
    for (float v : a["dense1.weight"].data()) CHECK(std::abs(v) <= limit);
    CHECK_THROWS_AS(a["nope"], LogicError);
}

TEST_CASE("forward gives a distribution and is deterministic at inference")
{
    for (std::size_t classes : {2u, 20u, 30u}) {
        Architecture arch;
        arch.num_classes = classes;
        arch.dense_units = {32, 16};
        const auto params = init_params(arch, 11);
        for (std::uint64_t s = 0; s < 4; ++s) {
            const auto fm = random_features(40, 32, s);
            const auto p = forward(params, fm, false, nullptr);
            REQUIRE(p.size() == classes);
            double total = 0;
            for (float v : p) {
                CHECK(v >= 0.0f);
                total += v;
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
            CHECK(forward(params, fm, false, nullptr) == p);
            CHECK(act(params, fm) == argmax(p));
        }
    }
}

TEST_CASE("training forward uses dropout; seeded rng reproduces it")
{
    Architecture arch;
    arch.dense_units = {16};
    const auto params = init_params(arch, 2);
    const auto fm = random_features(40, 32, 9);
    Rng r1(5), r2(5);
    const auto a = forward(params, fm, true, &r1);
    const auto b = forward(params, fm, true, &r2);
    CHECK(a == b);
    bool differs = false;
    Rng r3(5);
    for (int i = 0; i < 8 && !differs; ++i) differs = forward(params, fm, true, &r3) != forward(params, fm, false, nullptr);
    CHECK(differs);
}

TEST_CASE("a batch gives the same rows as single states")
{
    Architecture arch;
    arch.dense_units = {32};
    const auto params = init_params(arch, 6);
    std::vector<dsp::FeatureMatrix> fms;
    for (std::uint64_t s = 0; s < 5; ++s) fms.push_back(random_features(40, 32, 40 + s));
    std::vector<const dsp::FeatureMatrix*> ptrs;
    for (const auto& f : fms) ptrs.push_back(&f);
    const auto probs = forward_batch(params, ptrs, false, nullptr);
    REQUIRE(probs.shape() == nn::Shape{5, 2});
    for (std::size_t i = 0; i < fms.size(); ++i) {
        const auto one = forward(params, fms[i], false, nullptr);
        for (std::size_t c = 0; c < 2; ++c) CHECK(probs.at(i, c) == doctest::Approx(one[c]).epsilon(1e-5));
    }
    CHECK(forward_batch(params, ptrs, false, nullptr) == probs);
}

TEST_CASE("state shape must match")
{
    const auto params = init_params(tiny(), 1);
    CHECK_THROWS_AS(forward(params, random_features(6, 5, 1), false, nullptr), ShapeError);
    CHECK_THROWS_AS(forward(params, random_features(7, 4, 1), false, nullptr), ShapeError);
}

TEST_CASE("argmax")
{
    const std::vector<float> tie = {0.25f, 0.375f, 0.375f};
    CHECK(argmax(tie) == 1);
    const std::vector<float> one = {1.0f};
    CHECK(argmax(one) == 0);
}

TEST_CASE("adding a constant to the head bias leaves the distribution unchanged")
{
    auto params = init_params(tiny(), 8);
    const auto fm = random_features(6, 4, 3);
    const auto before = forward(params, fm, false, nullptr);
    for (float& v : params["head.bias"].data()) v += 2.5f;
    const auto after = forward(params, fm, false, nullptr);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] == doctest::Approx(before[i]).epsilon(1e-5));
}

TEST_CASE("model pair sync")
{
    ModelPair<PolicyParams> pair(init_params(tiny(), 1));
    CHECK(pair.policy() == pair.target());
    pair.policy()["head.bias"][0] = 4.0f;
    CHECK(pair.target()["head.bias"][0] != 4.0f);
    pair.sync();
    CHECK(pair.target() == pair.policy());
    // the copy is deep
    pair.policy()["head.bias"][0] = -1.0f;
    CHECK(pair.target()["head.bias"][0] == 4.0f);
    const auto snapshot = pair.target();
    pair.sync();
    pair.sync();
    CHECK(pair.target() == pair.policy());
    CHECK(!(pair.target() == snapshot));
}

TEST_CASE("checkpoint round trip")
{
    TempDir dir("ckpt");
    const fs::path path = dir.path() / "nested" / "model.ckpt";
    Architecture arch;
    arch.dense_units = {64, 32};
    const auto params = init_params(arch, 21);
    save_checkpoint(params, path);
    const auto loaded = load_checkpoint(path);
    CHECK(loaded == params);
    CHECK(load_checkpoint(path, arch) == params);
    const auto fm = random_features(40, 32, 4);
    CHECK(forward(loaded, fm, false, nullptr) == forward(params, fm, false, nullptr));
    for (const auto& entry : fs::directory_iterator(path.parent_path()))
        CHECK(entry.path().filename() == "model.ckpt");

    SUBCASE("class count mismatch names the head")
    {
        Architecture other = arch;
        other.num_classes = 20;
        CHECK_THROWS_WITH_AS(load_checkpoint(path, other), doctest::Contains("head.weight"), ShapeError);
    }
    SUBCASE("bad magic")
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XX", 2);
        f.close();
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), FormatError);
    }
    SUBCASE("truncated payload")
    {
        fs::resize_file(path, fs::file_size(path) - 3);
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"), FormatError);
    }
    SUBCASE("missing file")
    {
        CHECK_THROWS_AS(load_checkpoint(dir.path() / "absent.ckpt"), IoError);
    }
}

TEST_CASE("end-to-end gradients of a small network")
{
    const Architecture arch = tiny();
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto init = init_params(arch, seed).cast<double>();
        // non-zero biases exercise every path
        Rng brng(seed + 100);
        for (auto& t : init.tensors)
            if (t.rank() == 1)
                for (double& v : t.data()) v += brng.uniform(-0.2, 0.2);
        const auto f1 = random_features(6, 4, seed + 7), f2 = random_features(6, 4, seed + 8);
        const dsp::FeatureMatrix* batch[] = {&f1, &f2};
        const auto state = state_batch<double>(batch);
        for (bool training : {false, true}) {
            auto result = kwsrl::testing::grad_check(
                init.tensors,
                [&](nn::Graph<double>& g, const std::vector<nn::Var<double>>& vars) {
                    Rng rng(seed * 31 + 1);  // same dropout mask on every evaluation
                    return build_network<double>(g, arch, vars, g.constant(state), training, &rng).probs;
                },
                seed);
            CHECK(result.checked == parameter_count(arch));
            CHECK(result.max_rel_error <= 1e-3);
        }
    }
}
