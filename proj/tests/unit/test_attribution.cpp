#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "../support/oracles.hpp"
#include "rprobe/attribution.hpp"
#include "rprobe/error.hpp"
#include "rprobe/io.hpp"
#include "rprobe/rng.hpp"

using namespace rprobe;
using namespace rprobe::testing;

namespace {

struct Fixture {
    std::shared_ptr<const Transformer> model;
    std::vector<int> tokens;
};

Fixture make_fixture(Architecture arch = Architecture::encoder_only, std::uint64_t seed = 3) {
    const auto c = toy_config(16, 2, 2, 32, arch);
    return {std::make_shared<const Transformer>(Transformer::random(c, seed)), toy_tokens(c, 6, seed)};
}

double norm_sq(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

std::vector<NeuronAddress> sample_addresses() {
    return {{1, Sublayer::intermediate, 0}, {1, Sublayer::intermediate, 17}, {1, Sublayer::output, 5},
            {2, Sublayer::intermediate, 31}, {2, Sublayer::output, 0},        {2, Sublayer::output, 15}};
}

}  // namespace

TEST(Topology, BertBaseNeuronCount) {
    const Topology t{12, 3072, 768};
    EXPECT_EQ(t.neuron_count(), 46080u);
    EXPECT_EQ(make_empty_record(t).size(), 46080u);
}

TEST(Engine, AlphaOneReproducesFrozenTarget) {
    const auto f = make_fixture();
    const AttributionEngine eng(f.model, Pooling::first_token);
    const auto ctx = eng.prepare(f.tokens);
    for (const auto& a : sample_addresses()) {
        EXPECT_NEAR(eng.scalar_output(ctx, a, 1.0), norm_sq(ctx.frozen_embedding), 1e-9);
    }
}

TEST(Engine, AlphaZeroMatchesZeroedNeuronSurgery) {
    for (auto arch : {Architecture::encoder_only, Architecture::decoder_only}) {
        const auto f = make_fixture(arch);
        const Pooling pooling = arch == Architecture::encoder_only ? Pooling::first_token : Pooling::last_token;
        const AttributionEngine eng(f.model, pooling);
        const auto ctx = eng.prepare(f.tokens);
        for (const auto& a : sample_addresses()) {
            const std::vector<double> zero(eng.neuron_weights(a).size(), 0.0);
            EXPECT_NEAR(eng.scalar_output(ctx, a, 0.0),
                        surgery_scalar(*f.model, f.tokens, pooling, ScalarTarget::frozen_dot, a, zero), 1e-6);
        }
    }
}

TEST(Engine, GradientMatchesFiniteDifferences) {
    const auto f = make_fixture();
    for (auto target : {ScalarTarget::frozen_dot, ScalarTarget::embedding_norm}) {
        AttributionOptions opt;
        opt.scalar_target = target;
        const AttributionEngine eng(f.model, Pooling::mean, opt);
        const auto ctx = eng.prepare(f.tokens);
        for (const auto& a : sample_addresses()) {
            for (double alpha : {0.35, 1.0}) {
                const auto w = eng.neuron_weights(a);
                std::vector<double> v(w.size());
                for (std::size_t j = 0; j < w.size(); ++j) v[j] = alpha * w[j];
                const auto g = eng.neuron_gradient(ctx, a, alpha);
                const auto fd = finite_difference_gradient(*f.model, f.tokens, Pooling::mean, target, a, v, 1e-4);
                double diff = 0.0, ref = 0.0;
                for (std::size_t j = 0; j < g.size(); ++j) {
                    diff += (g[j] - fd[j]) * (g[j] - fd[j]);
                    ref += fd[j] * fd[j];
                }
                EXPECT_LT(std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12), 1e-4);
            }
        }
    }
}

TEST(Engine, BatchedMatchesSequential) {
    const auto f = make_fixture();
    AttributionOptions opt;
    opt.n_steps = 5;
    opt.max_batch_sequences = 7;
    const AttributionEngine eng(f.model, Pooling::first_token, opt);
    const auto ctx = eng.prepare(f.tokens);
    for (std::size_t layer : {1u, 2u}) {
        for (auto s : {Sublayer::intermediate, Sublayer::output}) {
            const std::vector<std::size_t> idx{0, 3, 9, 15};
            const auto batched = eng.attribute_neurons(ctx, layer, s, idx);
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const NeuronAddress a{layer, s, idx[k]};
                EXPECT_NEAR(batched[k], sequential_attribution(*f.model, f.tokens, Pooling::first_token, a, opt),
                            1e-5);
                EXPECT_NEAR(batched[k], eng.integrated_gradient_attribution(ctx, a), 1e-9);
            }
        }
    }
}

TEST(Engine, ZeroNeuronHasConstantOutputAndZeroAttribution) {
    const auto c = toy_config();
    const Transformer base = Transformer::random(c, 4);
    const NeuronAddress a{1, Sublayer::intermediate, 2};
    const std::vector<double> zero(16, 0.0);
    auto model = std::make_shared<const Transformer>(with_neuron_weights(base, a, zero));
    const AttributionEngine eng(model, Pooling::mean);
    const auto ctx = eng.prepare(toy_tokens(c, 5, 1));
    const double p0 = eng.scalar_output(ctx, a, 0.0);
    EXPECT_NEAR(eng.scalar_output(ctx, a, 0.5), p0, 1e-12);
    EXPECT_NEAR(eng.scalar_output(ctx, a, 1.0), p0, 1e-12);
    EXPECT_EQ(eng.integrated_gradient_attribution(ctx, a), 0.0);
}

TEST(Engine, ExampleRecordIsDeterministicAndThreadIndependent) {
    const auto f = make_fixture();
    AttributionOptions opt;
    opt.n_steps = 3;
    const AttributionEngine one(f.model, Pooling::first_token, opt);
    opt.threads = 3;
    const AttributionEngine three(f.model, Pooling::first_token, opt);
    const auto a = one.attribute_example("x", one.prepare(f.tokens));
    const auto b = one.attribute_example("x", one.prepare(f.tokens));
    const auto c = three.attribute_example("x", three.prepare(f.tokens));
    EXPECT_EQ(a.intermediate, b.intermediate);
    EXPECT_EQ(a.output, b.output);
    EXPECT_EQ(a.intermediate, c.intermediate);
    EXPECT_EQ(a.output, c.output);
    EXPECT_EQ(a.size(), 2u * (32 + 16));
    for (const auto& row : a.intermediate) {
        for (double v : row) EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
    }
}

TEST(Engine, InvalidAddressesAndPooling) {
    const auto f = make_fixture();
    const AttributionEngine eng(f.model, Pooling::mean);
    EXPECT_THROW(eng.validate({0, Sublayer::intermediate, 0}), ArgumentError);
    EXPECT_THROW(eng.validate({3, Sublayer::intermediate, 0}), ArgumentError);
    EXPECT_THROW(eng.validate({1, Sublayer::output, 16}), ArgumentError);
    EXPECT_THROW(eng.validate({1, Sublayer::intermediate, 32}), ArgumentError);
    const auto d = make_fixture(Architecture::decoder_only);
    EXPECT_THROW(AttributionEngine(d.model, Pooling::first_token), PoolingMismatchError);
    AttributionOptions bad;
    bad.n_steps = 0;
    EXPECT_THROW(AttributionEngine(f.model, Pooling::mean, bad), ArgumentError);
}

TEST(Threshold, KeepsScoresAtOrAboveFractionOfMax) {
    AttributionRecord r = make_empty_record({1, 4, 0});
    r.intermediate[0] = {10.0, 5.0, 0.9, 0.05};
    const auto s = normalize_and_threshold(r, 0.1);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0].index, 0u);
    EXPECT_EQ(s[1].index, 1u);
    r.intermediate[0] = {10.0, 2.0, 1.99, -3.0};
    EXPECT_EQ(normalize_and_threshold(r, 0.2).size(), 2u);
}

TEST(Threshold, NonPositiveMaximumGivesEmptySet) {
    AttributionRecord r = make_empty_record({2, 3, 2});
    EXPECT_TRUE(normalize_and_threshold(r, 0.2).empty());
    for (auto& row : r.output) std::fill(row.begin(), row.end(), -1.0);
    EXPECT_TRUE(normalize_and_threshold(r, 0.2).empty());
    EXPECT_THROW(normalize_and_threshold(r, 0.0), ArgumentError);
}

TEST(Threshold, InvariantToPositiveScaling) {
    const Topology t{3, 8, 4};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const AttributionRecord r = random_record(t, seed);
        AttributionRecord scaled = r;
        for (auto& row : scaled.intermediate) {
            for (auto& v : row) v *= 4.0;
        }
        for (auto& row : scaled.output) {
            for (auto& v : row) v *= 4.0;
        }
        EXPECT_EQ(normalize_and_threshold(r, 0.2), normalize_and_threshold(scaled, 0.2));
    }
}

TEST(Threshold, MatchesBruteForceOracle) {
    const Topology t{4, 12, 6};
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        const AttributionRecord r = random_record(t, seed);
        for (double tau : {0.1, 0.2, 0.5, 1.0}) {
            EXPECT_EQ(normalize_and_threshold(r, tau), brute_force_threshold(r, tau)) << seed;
        }
    }
}

TEST(Aggregate, MatchesCountingOracleAndIsOrderInvariant) {
    const Topology t{3, 10, 5};
    std::vector<std::vector<NeuronAddress>> sets;
    for (std::uint64_t seed = 0; seed < 40; ++seed) sets.push_back(normalize_and_threshold(random_record(t, seed), 0.3));
    const ActivationSummary s = aggregate_activation_frequency(sets, t, 0.3);
    EXPECT_EQ(s.example_count, 40u);
    EXPECT_EQ(s.intermediate_frequency, counting_frequency(sets, t, Sublayer::intermediate));
    EXPECT_EQ(s.output_frequency, counting_frequency(sets, t, Sublayer::output));

    auto reversed = sets;
    std::reverse(reversed.begin(), reversed.end());
    const ActivationSummary r = aggregate_activation_frequency(reversed, t, 0.3);
    EXPECT_EQ(r.intermediate_frequency, s.intermediate_frequency);
    EXPECT_EQ(r.output_active_total, s.output_active_total);

    double total = 0.0;
    for (double f : s.intermediate_frequency[1]) total += f;
    EXPECT_NEAR(s.layer_percentage(2, Sublayer::intermediate), 100.0 * total / 10.0, 1e-12);
    for (const auto& row : s.intermediate_frequency) {
        for (double f : row) {
            EXPECT_GE(f, 0.0);
            EXPECT_LE(f, 1.0);
        }
    }
}

TEST(Aggregate, RejectsEmptyAndInvalidInput) {
    const Topology t{1, 2, 2};
    EXPECT_THROW(aggregate_activation_frequency({}, t), ArgumentError);
    EXPECT_THROW(aggregate_activation_frequency({{{2, Sublayer::output, 0}}}, t), ArgumentError);
    const auto s = aggregate_activation_frequency({{{1, Sublayer::output, 1}, {1, Sublayer::output, 1}}}, t);
    EXPECT_EQ(s.frequency({1, Sublayer::output, 1}), 1.0);
}

TEST(Records, BinaryRoundTripAndSummaryFiles) {
    TempDir dir;
    const Topology t{2, 6, 3};
    AttributionRecord r = random_record(t, 9);
    r.example_id = "ex-1";
    r.n_steps = 20;
    for (auto& row : r.intermediate) {
        for (auto& v : row) v = static_cast<float>(v);
    }
    for (auto& row : r.output) {
        for (auto& v : row) v = static_cast<float>(v);
    }
    write_attribution_record(dir / "r.rpat", r);
    const AttributionRecord q = read_attribution_record(dir / "r.rpat");
    EXPECT_EQ(q.example_id, "ex-1");
    EXPECT_EQ(q.n_steps, 20);
    EXPECT_EQ(q.topology, t);
    EXPECT_EQ(q.intermediate, r.intermediate);
    EXPECT_EQ(q.output, r.output);

    const auto s = aggregate_activation_frequency({normalize_and_threshold(r, 0.2)}, t, 0.2);
    write_activation_summary(dir / "summary.csv", dir / "rollup.csv", s, "m");
    const auto summary = io::read_csv(dir / "summary.csv");
    EXPECT_EQ(summary.rows.size(), t.neuron_count());
    EXPECT_EQ(summary.header, std::vector<std::string>(std::begin(kSummaryColumns), std::end(kSummaryColumns)));
    const auto rollup = io::read_csv(dir / "rollup.csv");
    EXPECT_EQ(rollup.rows.size(), 4u);
    EXPECT_EQ(rollup.header, std::vector<std::string>(std::begin(kRollupColumns), std::end(kRollupColumns)));
}
