#include <gtest/gtest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "rprobe/error.hpp"
#include "rprobe/probe.hpp"
#include "rprobe/rng.hpp"

using namespace rprobe;
using rprobe::testing::random_features;
using rprobe::testing::separable_features;
using rprobe::testing::TempDir;

namespace {

Hyperparameters fast_hp(int epochs = 10) {
    Hyperparameters hp;
    hp.learning_rate = 1e-2;
    hp.batch_size = 64;
    hp.max_epochs = epochs;
    return hp;
}

LinearProbe zero_probe(int n, std::size_t dim) {
    LinearProbe p;
    p.n = n;
    p.dim = dim;
    p.layer = 1;
    p.weight.assign(static_cast<std::size_t>(n) * (n + 1) * dim, 0.0f);
    p.bias.assign(n, 0.0f);
    return p;
}

}  // namespace

TEST(Features, ConcatenatesQueryThenPassages) {
    const std::vector<float> q{1, 2}, p1{3, 4}, p2{5, 6};
    const auto f = assemble_features(q, {p1, p2}, 1, 3);
    EXPECT_EQ(f.z, (std::vector<float>{1, 2, 3, 4, 5, 6}));
    EXPECT_EQ(f.label, 1);
    EXPECT_EQ(f.n, 2);
    EXPECT_EQ(f.layer, 3);
}

TEST(Features, RejectsBadLabelAndDimension) {
    const std::vector<float> q{1, 2}, p{3, 4}, bad{1};
    EXPECT_THROW(assemble_features(q, {p, p}, 2), ArgumentError);
    EXPECT_THROW(assemble_features(q, {p, bad}, 0), ArgumentError);
    EXPECT_THROW(assemble_features({}, {p, p}, 0), ArgumentError);
}

TEST(Probe, ZeroProbePredictsFirstIndex) {
    const LinearProbe p = zero_probe(4, 3);
    const std::vector<float> z(15, 0.5f);
    EXPECT_EQ(probe_predict(p, z), 0);
}

TEST(Probe, LogitsMatchLoopOracle) {
    const FeatureSet data = random_features(3, 5, 20, 1);
    LinearProbe p = zero_probe(3, 5);
    Rng rng(2);
    for (auto& w : p.weight) w = static_cast<float>(standard_normal(rng));
    for (auto& b : p.bias) b = static_cast<float>(standard_normal(rng));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto z = data.row(i);
        const auto logits = probe_logits(p, z);
        int best = 0;
        double best_v = -INFINITY;
        for (int j = 0; j < 3; ++j) {
            double v = p.bias[j];
            for (std::size_t k = 0; k < z.size(); ++k) v += static_cast<double>(p.weight_row(j)[k]) * z[k];
            EXPECT_NEAR(logits[j], v, 1e-4);
            if (v > best_v) {
                best_v = v;
                best = j;
            }
        }
        hits += best == data.label(i);
    }
    EXPECT_DOUBLE_EQ(probe_accuracy(p, data), static_cast<double>(hits) / 20.0);
}

TEST(Probe, PredictionInvariantToPositiveScaleAndShift) {
    LinearProbe p = zero_probe(3, 4);
    Rng rng(3);
    for (auto& w : p.weight) w = static_cast<float>(standard_normal(rng));
    for (auto& b : p.bias) b = static_cast<float>(standard_normal(rng));
    LinearProbe q = p;
    for (auto& w : q.weight) w *= 2.0f;
    for (auto& b : q.bias) b = b * 2.0f + 1.0f;
    const FeatureSet data = random_features(3, 4, 50, 4);
    for (std::size_t i = 0; i < data.size(); ++i) {
        EXPECT_EQ(probe_predict(p, data.row(i)), probe_predict(q, data.row(i)));
    }
}

TEST(Probe, PassagePermutationMovesPrediction) {
    const FeatureSet train = separable_features(3, 8, 600, 5);
    const FeatureSet val = separable_features(3, 8, 100, 6);
    const LinearProbe p = train_probe(train, val, fast_hp(15));
    const FeatureSet test = separable_features(3, 8, 100, 7);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto z = test.row(i);
        std::vector<float> swapped(z.begin(), z.end());
        // swap passages 0 and 1
        for (std::size_t k = 0; k < 8; ++k) std::swap(swapped[8 + k], swapped[16 + k]);
        const int a = probe_predict(p, z), b = probe_predict(p, swapped);
        const int mapped = a == 0 ? 1 : a == 1 ? 0 : 2;
        agree += b == mapped;
    }
    EXPECT_GE(agree, 90u);
}

TEST(Probe, SeparableSetIsLearned) {
    const FeatureSet train = separable_features(4, 16, 2000, 8);
    const FeatureSet val = separable_features(4, 16, 300, 9);
    const FeatureSet test = separable_features(4, 16, 1000, 10);
    const LinearProbe p = train_probe(train, val, fast_hp(20));
    EXPECT_GE(probe_accuracy(p, test), 0.99);
}

TEST(Probe, RandomLabelsStayNearChance) {
    for (int n : {2, 5}) {
        const FeatureSet train = random_features(n, 8, 2000, 11 + n);
        const FeatureSet val = random_features(n, 8, 500, 21 + n);
        const FeatureSet test = random_features(n, 8, 4000, 31 + n);
        const LinearProbe p = train_probe(train, val, fast_hp(5));
        EXPECT_NEAR(probe_accuracy(p, test), 1.0 / n, 0.04) << "N=" << n;
    }
}

TEST(Probe, TrainingIsDeterministicAndEchoesHyperparameters) {
    const FeatureSet train = random_features(2, 4, 300, 1), val = random_features(2, 4, 50, 2);
    Hyperparameters hp = fast_hp(3);
    const LinearProbe a = train_probe(train, val, hp), b = train_probe(train, val, hp);
    EXPECT_EQ(a.weight, b.weight);
    EXPECT_EQ(a.bias, b.bias);

    const Hyperparameters defaults;
    EXPECT_DOUBLE_EQ(defaults.learning_rate, 1e-4);
    EXPECT_EQ(defaults.batch_size, 32768u);
    EXPECT_EQ(a.meta.batch_size, 64u);
    EXPECT_DOUBLE_EQ(a.meta.learning_rate, 1e-2);
    EXPECT_EQ(a.meta.seed, hp.seed);
}

TEST(Probe, BestEpochIsEarliestMaximum) {
    const FeatureSet train = separable_features(2, 8, 400, 3), val = separable_features(2, 8, 100, 4);
    const LinearProbe p = train_probe(train, val, fast_hp(8));
    ASSERT_EQ(p.meta.history.size(), 8u);
    double best = -1.0;
    int best_epoch = 0;
    for (const auto& e : p.meta.history) {
        if (e.val_accuracy > best) {
            best = e.val_accuracy;
            best_epoch = e.epoch;
        }
    }
    EXPECT_EQ(p.meta.best_epoch, best_epoch);
    EXPECT_DOUBLE_EQ(p.meta.best_val_accuracy, best);
    EXPECT_DOUBLE_EQ(probe_accuracy(p, val), best);
}

TEST(Probe, EmptyValidationKeepsFinalEpoch) {
    const FeatureSet train = random_features(2, 4, 100, 1);
    const LinearProbe p = train_probe(train, FeatureSet(2, 4, 0), fast_hp(4));
    EXPECT_TRUE(p.meta.validation_fallback);
    EXPECT_EQ(p.meta.best_epoch, 4);
}

TEST(Probe, InvalidInputsRejected) {
    EXPECT_THROW(train_probe(FeatureSet(2, 4, 0), FeatureSet(2, 4, 0), fast_hp()), ArgumentError);
    Hyperparameters hp = fast_hp();
    hp.batch_size = 0;
    EXPECT_THROW(train_probe(random_features(2, 4, 10, 1), FeatureSet(2, 4, 0), hp), ArgumentError);
    EXPECT_THROW(train_probe(random_features(2, 4, 10, 1), random_features(3, 4, 10, 1), fast_hp()), ArgumentError);
}

TEST(Probe, SaveLoadRoundTrip) {
    TempDir dir;
    const LinearProbe p = train_probe(random_features(3, 4, 100, 1), random_features(3, 4, 20, 2), fast_hp(2));
    save_probe(p, dir / "p.rplp");
    const LinearProbe q = load_probe(dir / "p.rplp");
    EXPECT_EQ(q.weight, p.weight);
    EXPECT_EQ(q.bias, p.bias);
    EXPECT_EQ(q.meta.best_epoch, p.meta.best_epoch);
}

TEST(Flags, SidecarRoundTripAcrossBitBoundaries) {
    TempDir dir;
    for (std::size_t count : {0u, 1u, 7u, 8u, 9u, 100u}) {
        FlagSidecar f;
        f.n = 3;
        f.layer = 5;
        f.fingerprint = 0xabcdef12345ULL;
        Rng rng(count);
        for (std::size_t i = 0; i < count; ++i) f.correct.push_back(uniform_index(rng, 2));
        write_flags(dir / "f.rpfl", f);
        const FlagSidecar g = read_flags(dir / "f.rpfl");
        EXPECT_EQ(g.correct, f.correct);
        EXPECT_EQ(g.n, 3);
        EXPECT_EQ(g.layer, 5);
        EXPECT_EQ(g.fingerprint, f.fingerprint);
    }
}

TEST(Evaluate, CorrectFlagsMatchAccuracy) {
    const FeatureSet test = separable_features(2, 4, 200, 1);
    const LinearProbe p = train_probe(separable_features(2, 4, 200, 2), FeatureSet(2, 4, 0), fast_hp(2));
    const ProbeResult r = evaluate_probe(p, test);
    ASSERT_EQ(r.correct.size(), 200u);
    std::size_t hits = 0;
    for (auto c : r.correct) hits += c;
    EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(hits) / 200.0);
}
