#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <random>

#include "cldd/errors.hpp"
#include "cldd/training.hpp"
#include "dense_oracle.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace cldd;

namespace {

// Plain factorization model (no layers) whose scores are z_p · z_d directly.
ModelState mf_state(std::size_t patients, std::size_t diseases, std::size_t k) {
    ModelConfig c = fixtures::small_config(k, 0, {}, 1);
    return init_state(c, diseases, Matrix(patients, 0));
}

std::vector<Triple> random_batch(std::mt19937_64& rng, const InteractionMatrix& y, std::size_t n) {
    TripleSampler sampler(y);
    return sampler.sample(rng, n);
}

}  // namespace

TEST(Loss, EqualScoresGiveLogTwo) {
    FinalEmbeddings z{Matrix(3, 2, 1.0), 1};
    const std::vector<Triple> batch{{0, 0, 1}, {0, 1, 0}};
    EXPECT_NEAR(pairwise_loss(batch, z), 2.0 * std::log(2.0), 1e-15);
    EXPECT_NEAR(pairwise_loss(batch, z) / 2.0, 0.693147, 1e-6);
}

TEST(Loss, LargeMarginIsStable) {
    FinalEmbeddings z{Matrix(3, 1), 1};
    z.table(0, 0) = 1.0;
    z.table(1, 0) = 30.0;
    const std::vector<Triple> batch{{0, 0, 1}};
    const double loss = pairwise_loss(batch, z);
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_NEAR(loss, 9.357622968840175e-14, 1e-20);
    const std::vector<Triple> reversed{{0, 1, 0}};
    EXPECT_NEAR(pairwise_loss(reversed, z), 30.0, 1e-12);
    EXPECT_EQ(softplus(-800.0), 0.0);
    EXPECT_EQ(softplus(800.0), 800.0);
}

TEST(Loss, RegularizerCountsSquares) {
    ModelState s = mf_state(2, 2, 2);
    for (Matrix* t : s.params.tensors()) t->fill(0.0);
    s.params.disease_embed(1, 0) = 2.0;
    EXPECT_EQ(squared_norm(s.params), 4.0);
    FinalEmbeddings z{Matrix(4, 2), 2};
    const std::vector<Triple> batch{{0, 0, 1}};
    EXPECT_NEAR(bpr_loss(batch, z, s, 1.0), std::log(2.0) + 4.0, 1e-15);
    EXPECT_THROW(bpr_loss({}, z, s, 1.0), StructuralError);
}

TEST(Loss, EmbeddingOnlyRegularizer) {
    std::mt19937_64 rng(1);
    const ModelState s = fixtures::random_state(rng, fixtures::small_config(4, 1, {4, 3}, 2), 3, 3);
    double tables = 0.0;
    for (double v : s.params.patient_learnable.values()) tables += v * v;
    for (double v : s.params.disease_embed.values()) tables += v * v;
    EXPECT_NEAR(squared_norm(s.params, false), tables, 1e-14);
    EXPECT_GT(squared_norm(s.params, true), tables);
}

TEST(Loss, AgreesWithDenseOracle) {
    std::mt19937_64 rng(2);
    const ModelState s = fixtures::random_state(rng, fixtures::small_config(6, 2, {6, 4}, 2), 5, 6);
    const auto y = fixtures::random_interactions(rng, 5, 6, 0.3);
    const auto batch = random_batch(rng, y, 12);
    const double ours = bpr_loss(batch, embed(s, GraphOperators::build(y)), s, 0.01);
    EXPECT_NEAR(ours, oracle::loss(s, y, batch, 0.01), 1e-10);
}

TEST(Backward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    const ModelState s = fixtures::random_state(rng, fixtures::small_config(8, 3, {8, 5}, 2), 5, 6);
    const auto y = fixtures::random_interactions(rng, 5, 6, 0.35);
    const auto batch = random_batch(rng, y, 10);
    for (const auto& check : fixtures::check_gradients(s, y, batch, 1e-3))
        EXPECT_LT(check.max_relative_error, 1e-4) << check.name;
}

TEST(Backward, DeepModelMatchesFiniteDifferences) {
    std::mt19937_64 rng(4);
    const ModelState s = fixtures::random_state(rng, fixtures::small_config(6, 2, {6, 4, 3}, 3), 4, 5);
    const auto y = fixtures::random_interactions(rng, 4, 5, 0.4);
    const auto batch = random_batch(rng, y, 8);
    for (const auto& check : fixtures::check_gradients(s, y, batch, 0.0))
        EXPECT_LT(check.max_relative_error, 1e-4) << check.name;
}

TEST(Backward, MatrixFactorizationGradient) {
    std::mt19937_64 rng(5);
    const ModelState s = mf_state(4, 5, 3);
    const auto y = fixtures::random_interactions(rng, 4, 5, 0.4);
    const auto batch = random_batch(rng, y, 6);
    for (const auto& check : fixtures::check_gradients(s, y, batch, 0.1))
        EXPECT_LT(check.max_relative_error, 1e-4) << check.name;
}

TEST(Backward, DropoutMaskIsRespected) {
    // With the mask recorded in the cache, the gradient is that of the masked network,
    // which is the eval network with the mask folded in. Check one loss direction.
    std::mt19937_64 rng(6);
    ModelState s = fixtures::random_state(rng, fixtures::small_config(6, 2, {6, 4}, 2, 0.3), 5, 6);
    const auto y = fixtures::random_interactions(rng, 5, 6, 0.4);
    const auto graph = GraphOperators::build(y);
    const auto batch = random_batch(rng, y, 8);
    const std::mt19937_64 saved = s.rng;
    const auto outputs = forward(s, graph, true);
    const auto grads = backward(batch, outputs, s, graph, 0.0);

    auto masked_loss = [&](ModelState probe) {
        probe.rng = saved;
        const auto out = forward(probe, graph, true);
        return pairwise_loss(batch, final_embeddings(out, probe.num_patients()));
    };
    const double h = 1e-5;
    ModelState up = s;
    ModelState down = s;
    up.params.layers[1].weight_bi(1, 2) += h;
    down.params.layers[1].weight_bi(1, 2) -= h;
    const double numeric = (masked_loss(up) - masked_loss(down)) / (2 * h);
    EXPECT_NEAR(grads.layers[1].weight_bi(1, 2), numeric, 1e-6 + 1e-4 * std::abs(numeric));
}

TEST(Backward, SaturatedBatchHasVanishingGradient) {
    ModelState s = mf_state(1, 2, 2);
    s.params.patient_learnable(0, 0) = 1.0;
    s.params.patient_learnable(0, 1) = 0.0;
    s.params.disease_embed(0, 0) = 50.0;
    s.params.disease_embed(0, 1) = 0.0;
    s.params.disease_embed(1, 0) = 0.0;
    s.params.disease_embed(1, 1) = 0.0;
    const InteractionMatrix y(1, 2, {{0, 0, 0}});
    const auto graph = GraphOperators::build(y);
    const auto outputs = forward(s, graph, true);
    const std::vector<Triple> batch{{0, 0, 1}, {0, 0, 1}};
    const auto grads = backward(batch, outputs, s, graph, 0.0);
    double norm = 0.0;
    for (const Matrix* t : grads.tensors()) norm += dot(t->values(), t->values());
    EXPECT_LT(std::sqrt(norm), 1e-10);
}

TEST(Backward, DuplicatedTripleDoublesGradient) {
    std::mt19937_64 rng(7);
    ModelState s = fixtures::random_state(rng, fixtures::small_config(6, 2, {6, 4}, 2), 5, 6);
    const auto y = fixtures::random_interactions(rng, 5, 6, 0.4);
    const auto graph = GraphOperators::build(y);
    const auto outputs = forward(s, graph, true);
    const auto t = random_batch(rng, y, 1)[0];
    const std::vector<Triple> once{t};
    const std::vector<Triple> twice{t, t};
    const auto g1 = backward(once, outputs, s, graph, 0.0);
    const auto g2 = backward(twice, outputs, s, graph, 0.0);
    const auto a = g1.tensors();
    const auto b = g2.tensors();
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i]->size(); ++j)
            EXPECT_EQ(b[i]->values()[j], 2.0 * a[i]->values()[j]);
}

TEST(Backward, RequiresTrainModeOutputs) {
    std::mt19937_64 rng(8);
    ModelState s = fixtures::random_state(rng, fixtures::small_config(4, 1, {4, 3}, 2), 3, 3);
    const auto y = fixtures::random_interactions(rng, 3, 3, 0.5);
    const auto graph = GraphOperators::build(y);
    const auto outputs = forward(s, graph, false);
    const std::vector<Triple> batch{{0, y.diseases_of(0)[0], 0}};
    EXPECT_THROW(backward(batch, outputs, s, graph, 0.0), StructuralError);
}

TEST(Adam, ZeroGradientLeavesParameters) {
    std::mt19937_64 rng(9);
    ModelState s = fixtures::random_state(rng, fixtures::small_config(4, 1, {4, 3}, 2), 3, 3);
    const Parameters before = s.params;
    AdamState adam = AdamState::zeros_like(s.params);
    adam_step(s, s.params.zeros_like(), adam, TrainConfig{});
    EXPECT_EQ(s.params, before);
    EXPECT_EQ(adam.step, 1u);
}

TEST(Adam, FirstStepHasLearningRateMagnitude) {
    ModelState s = mf_state(1, 1, 1);
    const Parameters before = s.params;
    GradientBuffer g = s.params.zeros_like();
    for (Matrix* t : g.tensors()) t->fill(1.0);
    TrainConfig config;
    config.learning_rate = 0.1;
    AdamState adam = AdamState::zeros_like(s.params);
    adam_step(s, g, adam, config);
    EXPECT_NEAR(before.patient_learnable(0, 0) - s.params.patient_learnable(0, 0),
                0.1 / (1.0 + 1e-8), 1e-15);
    EXPECT_NEAR(before.disease_embed(0, 0) - s.params.disease_embed(0, 0), 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, FixedAttributesNeverChange) {
    std::mt19937_64 rng(10);
    ModelState s = fixtures::random_state(rng, fixtures::small_config(6, 3, {6, 4}, 2, 0.2), 6, 5);
    const Matrix fixed = s.patient_fixed;
    const auto y = fixtures::random_interactions(rng, 6, 5, 0.4);
    const auto graph = GraphOperators::build(y);
    AdamState adam = AdamState::zeros_like(s.params);
    TrainConfig config;
    config.learning_rate = 0.05;
    for (int step = 0; step < 100; ++step) {
        const auto batch = random_batch(rng, y, 8);
        const auto outputs = forward(s, graph, true);
        adam_step(s, backward(batch, outputs, s, graph, 1e-3), adam, config);
    }
    ASSERT_EQ(s.patient_fixed.size(), fixed.size());
    EXPECT_EQ(std::memcmp(s.patient_fixed.values().data(), fixed.values().data(),
                          fixed.size() * sizeof(double)),
              0);
}

TEST(Adam, NonFiniteGradientIsRejectedWithoutSideEffects) {
    ModelState s = mf_state(2, 2, 2);
    const Parameters before = s.params;
    GradientBuffer g = s.params.zeros_like();
    g.disease_embed(1, 1) = std::nan("");
    AdamState adam = AdamState::zeros_like(s.params);
    EXPECT_THROW(adam_step(s, g, adam, TrainConfig{}), DivergenceError);
    EXPECT_EQ(s.params, before);
    EXPECT_EQ(adam.step, 0u);
}

TEST(Sampler, ForcedNegative) {
    const InteractionMatrix y(1, 2, {{0, 0, 0}});
    TripleSampler sampler(y);
    std::mt19937_64 rng(11);
    for (const auto& t : sampler.sample(rng, 200)) {
        EXPECT_EQ(t.positive, 0u);
        EXPECT_EQ(t.negative, 1u);
    }
}

TEST(Sampler, NegativesAreUniform) {
    const InteractionMatrix y(1, 12, {{0, 3, 0}, {0, 7, 0}});
    TripleSampler sampler(y);
    std::mt19937_64 rng(12);
    const int draws = 100000;
    std::map<std::uint32_t, int> counts;
    for (int i = 0; i < draws; ++i) ++counts[sampler.draw_negative(rng, 0)];
    EXPECT_EQ(counts.size(), 10u);
    EXPECT_EQ(counts.count(3), 0u);
    EXPECT_EQ(counts.count(7), 0u);
    const double p = 0.1;
    const double sigma = std::sqrt(draws * p * (1 - p));
    for (const auto& [d, c] : counts) EXPECT_LT(std::abs(c - draws * p), 3 * sigma) << "disease " << d;
}

TEST(Sampler, EpochCoversEveryPositiveAndIsSeeded) {
    std::mt19937_64 data_rng(13);
    const auto y = fixtures::random_interactions(data_rng, 30, 20, 0.2);
    TripleSampler sampler(y);
    std::mt19937_64 a(5);
    std::mt19937_64 b(5);
    const auto ea = sampler.epoch(a, 16, 2);
    const auto eb = sampler.epoch(b, 16, 2);
    EXPECT_EQ(ea, eb);
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> seen;
    for (const auto& batch : ea) {
        EXPECT_LE(batch.size(), 32u);
        for (const auto& t : batch) {
            EXPECT_TRUE(y.contains(t.patient, t.positive));
            EXPECT_FALSE(y.contains(t.patient, t.negative));
            ++seen[{t.patient, t.positive}];
        }
    }
    EXPECT_EQ(seen.size(), y.nnz());
    for (const auto& [key, c] : seen) EXPECT_EQ(c, 2);
}

TEST(Sampler, SkipsPatientsWithoutNegatives) {
    const InteractionMatrix y(2, 2, {{0, 0, 0}, {0, 1, 0}, {1, 0, 0}});
    TripleSampler sampler(y);
    ASSERT_EQ(sampler.skipped_patients().size(), 1u);
    EXPECT_EQ(sampler.skipped_patients()[0], 0u);
    EXPECT_EQ(sampler.num_usable_positives(), 1u);
}

TEST(Fit, ZeroEpochsReturnsInitialState) {
    std::mt19937_64 rng(14);
    const ModelState s = fixtures::random_state(rng, fixtures::small_config(4, 1, {4, 3}, 2), 6, 5);
    const auto y = fixtures::random_interactions(rng, 6, 5, 0.4);
    TrainConfig config;
    config.epochs = 0;
    const FitResult r = fit_state(s, y, config);
    EXPECT_EQ(r.state.params, s.params);
    EXPECT_TRUE(r.log.empty());
    EXPECT_FALSE(r.diverged);
}

TEST(Fit, SameSeedsSameRun) {
    std::mt19937_64 rng(15);
    const ModelState s = fixtures::random_state(rng, fixtures::small_config(6, 2, {6, 4}, 2, 0.1), 20, 12);
    const auto y = fixtures::random_interactions(rng, 20, 12, 0.25);
    TrainConfig config;
    config.epochs = 4;
    config.batch_size = 16;
    config.learning_rate = 0.01;
    const FitResult a = fit_state(s, y, config);
    const FitResult b = fit_state(s, y, config);
    ASSERT_EQ(a.log.size(), 4u);
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].mean_loss, b.log[i].mean_loss);
        EXPECT_EQ(a.log[i].probe_loss, b.log[i].probe_loss);
    }
    EXPECT_EQ(a.state.params, b.state.params);
}

TEST(Fit, DivergenceReturnsLastGoodState) {
    std::mt19937_64 rng(16);
    ModelState s = fixtures::random_state(rng, fixtures::small_config(4, 1, {4, 3}, 2), 6, 5);
    s.params.disease_embed(0, 0) = std::numeric_limits<double>::infinity();
    const auto y = fixtures::random_interactions(rng, 6, 5, 0.5);
    TrainConfig config;
    config.epochs = 3;
    const FitResult r = fit_state(s, y, config);
    EXPECT_TRUE(r.diverged);
    EXPECT_FALSE(r.diagnostic.empty());
    EXPECT_TRUE(r.log.empty());
}

TEST(Fit, LossFallsOnPlantedData) {
    SynthConfig sc;
    sc.patients = 300;
    sc.diseases = 150;
    sc.rank = 8;
    sc.density = 0.05;
    sc.seed = 1;
    const auto synth = synth_generate(sc);
    const Dataset data = temporal_split(synth.tables, 0.8);
    ModelConfig mc;
    TrainConfig tc;
    const FitResult r = fit(data, mc, tc);
    ASSERT_EQ(r.log.size(), 30u);
    EXPECT_LT(r.log.back().mean_loss, r.log.front().mean_loss);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    c.learning_rate = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.beta2 = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}
