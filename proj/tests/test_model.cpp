#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cldd/errors.hpp"
#include "cldd/model.hpp"
#include "dense_oracle.hpp"
#include "fixtures.hpp"

using namespace cldd;

namespace {

void expect_near_matrix(const Matrix& a, const Matrix& b, double tol) {
    ASSERT_EQ(a.rows(), b.rows());
    ASSERT_EQ(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            EXPECT_NEAR(a(i, j), b(i, j), tol) << "at (" << i << "," << j << ")";
}

Matrix identity(std::size_t n) { return oracle::identity(n); }

}  // namespace

TEST(ModelConfig, Validation) {
    ModelConfig c = fixtures::small_config(4, 4, {4}, 2);
    EXPECT_THROW(c.validate(), ConfigError);  // f == k
    c = fixtures::small_config(4, 1, {4}, 0);
    EXPECT_THROW(c.validate(), ConfigError);
    c = fixtures::small_config(4, 1, {4, 3}, 2);
    c.dropout = {0.1};
    EXPECT_THROW(c.validate(), ConfigError);
    c = fixtures::small_config(4, 1, {4, 3}, 2);
    c.dropout = {0.0, 1.0};
    EXPECT_THROW(c.validate(), ConfigError);
    c = fixtures::small_config(4, 1, {4, 0}, 2);
    EXPECT_THROW(c.validate(), ConfigError);
    c = fixtures::small_config(4, 1, {4, 3}, 2);
    c.leaky_slope = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_NO_THROW(fixtures::small_config(4, 1, {4, 3}, 2).validate());
}

TEST(InitState, FeatureWidthMustMatch) {
    EXPECT_THROW(init_state(fixtures::small_config(4, 2, {4}, 1), 3, Matrix(5, 3)), ConfigError);
}

TEST(InitState, ZeroFixedWidthMakesPatientsFullyLearnable) {
    const ModelState s = init_state(fixtures::small_config(6, 0, {6}, 1), 3, Matrix(5, 0));
    EXPECT_EQ(s.params.patient_learnable.rows(), 5u);
    EXPECT_EQ(s.params.patient_learnable.cols(), 6u);
    EXPECT_EQ(assemble_embeddings(s).cols(), 6u);
}

TEST(InitState, FeaturesCopiedAndRangesRespected) {
    std::mt19937_64 rng(1);
    const Matrix features = fixtures::random_matrix(rng, 7, 3);
    const ModelConfig c = fixtures::small_config(8, 3, {8, 5}, 2);
    const ModelState s = init_state(c, 4, features);
    EXPECT_EQ(s.patient_fixed, features);
    const double bound = std::sqrt(6.0 / (8.0 + 5.0));
    for (double v : s.params.layers[1].weight_gc.values()) EXPECT_LE(std::abs(v), bound);
    for (double v : s.params.layers[1].hop_logits.values()) EXPECT_EQ(v, 0.0);
    for (double v : s.params.layers[1].bias_gc.values()) EXPECT_EQ(v, 0.0);
}

TEST(InitState, SameSeedIsBitIdentical) {
    const ModelConfig c = fixtures::small_config(8, 3, {8, 5, 4}, 3);
    const Matrix features(6, 3, 1.0);
    const ModelState a = init_state(c, 5, features);
    const ModelState b = init_state(c, 5, features);
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(a.rng, b.rng);
    ModelConfig other = c;
    other.seed = c.seed + 1;
    EXPECT_NE(init_state(other, 5, features).params, a.params);
}

TEST(HopWeights, SoftmaxOfZerosIsUniform) {
    const auto beta = hop_weights(Matrix(1, 4));
    ASSERT_EQ(beta.size(), 4u);
    for (double b : beta) EXPECT_DOUBLE_EQ(b, 0.25);
}

TEST(HopWeights, SumToOneAndNonNegative) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix logits = fixtures::random_matrix(rng, 1, 5, 20.0);
        const auto beta = hop_weights(logits);
        double total = 0.0;
        for (double b : beta) {
            EXPECT_GE(b, 0.0);
            total += b;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(FirstOrderAggregate, IsolatedPatientIsZero) {
    const ModelConfig c = fixtures::small_config(4, 1, {4}, 1);
    std::mt19937_64 rng(3);
    const ModelState s = fixtures::random_state(rng, c, 3, 2);
    const InteractionMatrix y(3, 2, {{0, 0, 0}, {1, 1, 0}});
    const Matrix out = first_order_aggregate(s, y);
    for (double v : out.row(2)) EXPECT_EQ(v, 0.0);
}

TEST(FirstOrderAggregate, SingleEdgeHandValue) {
    ModelState s = init_state(fixtures::small_config(3, 0, {3}, 1), 1, Matrix(1, 0));
    s.params.patient_learnable.fill(1.0);
    s.params.disease_embed.fill(1.0);
    s.params.layers[0].weight_gc = identity(3);
    const Matrix out = first_order_aggregate(s, InteractionMatrix(1, 1, {{0, 0, 0}}));
    for (double v : out.values()) EXPECT_EQ(v, 1.0);
}

TEST(FirstOrderAggregate, MatchesLiteralSum) {
    std::mt19937_64 rng(4);
    const ModelConfig c = fixtures::small_config(5, 2, {5}, 1);
    const ModelState s = fixtures::random_state(rng, c, 4, 3);
    const auto y = fixtures::random_interactions(rng, 4, 3, 0.5);
    const Matrix z0 = assemble_embeddings(s);
    const Matrix& w = s.params.layers[0].weight_gc;
    Matrix expected(7, 5);
    for (std::size_t p = 0; p < 4; ++p)
        for (std::size_t d = 0; d < 3; ++d) {
            if (!y.contains(p, d)) continue;
            const double decay = 1.0 / std::sqrt(double(y.patient_degree(p) * y.disease_degree(d)));
            for (std::size_t out = 0; out < 5; ++out)
                for (std::size_t in = 0; in < 5; ++in) {
                    const double message = z0(4 + d, in) * z0(p, in) * w(in, out) * decay;
                    expected(p, out) += message;
                    expected(4 + d, out) += message;
                }
        }
    for (double& v : expected.values()) v = v > 0 ? v : c.leaky_slope * v;
    expect_near_matrix(first_order_aggregate(s, y), expected, 1e-12);
}

TEST(HopMix, SingleHopIsOneProduct) {
    std::mt19937_64 rng(5);
    const auto y = fixtures::random_interactions(rng, 3, 3, 0.5);
    const auto lap = normalize(build_adjacency(y), 3);
    const Matrix z = fixtures::random_matrix(rng, 6, 4);
    const std::vector<double> one{1.0};
    EXPECT_EQ(hop_mix(lap, z, one), spmm(lap.matrix, z));
    const std::vector<double> first{1.0, 0.0, 0.0};
    EXPECT_EQ(hop_mix(lap, z, first), spmm(lap.matrix, z));
}

TEST(HopMix, MatchesDensePowers) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const auto y = fixtures::random_interactions(rng, 3, 3, 0.5);
        const auto lap = normalize(build_adjacency(y), 3);
        const Matrix z = fixtures::random_matrix(rng, 6, 4);
        const auto beta = hop_weights(fixtures::random_matrix(rng, 1, 3));
        expect_near_matrix(hop_mix(lap, z, beta),
                           oracle::hop_mix(oracle::normalized(oracle::adjacency(y)), z, beta), 1e-10);
    }
}

TEST(PropagateLayer, LinearBranchAblation) {
    std::mt19937_64 rng(7);
    const ModelConfig c = fixtures::small_config(4, 1, {4, 4}, 3);
    ModelState s = fixtures::random_state(rng, c, 3, 3);
    auto& layer = s.params.layers[1];
    layer.weight_gc = identity(4);
    layer.weight_bi.fill(0.0);
    layer.bias_gc.fill(0.0);
    layer.bias_bi.fill(0.0);
    layer.hop_logits = Matrix(1, 3);
    layer.hop_logits(0, 1) = -2000.0;
    layer.hop_logits(0, 2) = -2000.0;

    const auto y = fixtures::random_interactions(rng, 3, 3, 0.5);
    const auto lap = normalize(build_adjacency(y), 3);
    const Matrix z = fixtures::random_matrix(rng, 6, 4);
    const Matrix out = propagate_layer(1, lap, z, s, false);

    Matrix expected = spmm(lap.matrix, z);
    for (std::size_t r = 0; r < expected.rows(); ++r) {
        double ss = 0.0;
        for (double& v : expected.row(r)) {
            v = leaky_relu(v, c.leaky_slope);
            ss += v * v;
        }
        for (double& v : expected.row(r)) v /= std::sqrt(ss);
    }
    expect_near_matrix(out, expected, 1e-14);
}

TEST(PropagateLayer, ZeroInputGivesZeroOutput) {
    std::mt19937_64 rng(8);
    const ModelConfig c = fixtures::small_config(4, 1, {4, 3}, 2);
    ModelState s = init_state(c, 3, fixtures::random_matrix(rng, 3, 1));
    const auto lap = normalize(build_adjacency(fixtures::random_interactions(rng, 3, 3, 0.5)), 3);
    const Matrix out = propagate_layer(1, lap, Matrix(6, 4), s, false);
    EXPECT_EQ(out, Matrix(6, 3));
}

TEST(PropagateLayer, WidthMismatchThrows) {
    std::mt19937_64 rng(9);
    const ModelConfig c = fixtures::small_config(4, 1, {4, 3}, 2);
    ModelState s = init_state(c, 3, fixtures::random_matrix(rng, 3, 1));
    const auto lap = normalize(build_adjacency(fixtures::random_interactions(rng, 3, 3, 0.5)), 3);
    EXPECT_THROW(propagate_layer(1, lap, Matrix(6, 5), s, false), StructuralError);
}

TEST(Forward, MatchesDenseOracle) {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 10; ++trial) {
        const ModelConfig c = fixtures::small_config(6, 2, {6, 4, 3}, 3);
        ModelState s = fixtures::random_state(rng, c, 4, 5);
        const auto y = fixtures::random_interactions(rng, 4, 5, 0.4);
        const auto ours = forward(s, GraphOperators::build(y), false);
        const auto theirs = oracle::forward(s, y);
        ASSERT_EQ(ours.layers.size(), theirs.size());
        for (std::size_t l = 0; l < theirs.size(); ++l) expect_near_matrix(ours.layers[l], theirs[l], 1e-10);
    }
}

TEST(Forward, SingleLayerHasTwoOutputs) {
    std::mt19937_64 rng(11);
    ModelState s = fixtures::random_state(rng, fixtures::small_config(4, 1, {4}, 2), 3, 3);
    const auto out = forward(s, GraphOperators::build(fixtures::random_interactions(rng, 3, 3, 0.5)), false);
    EXPECT_EQ(out.layers.size(), 2u);
    EXPECT_TRUE(out.caches.empty());
}

TEST(Forward, RowsAreUnitOrZero) {
    std::mt19937_64 rng(12);
    ModelState s = fixtures::random_state(rng, fixtures::small_config(8, 3, {8, 6, 6}, 3, 0.3), 20, 15);
    const auto y = fixtures::random_interactions(rng, 20, 15, 0.15);
    for (bool train : {false, true}) {
        const auto out = forward(s, GraphOperators::build(y), train);
        for (std::size_t l = 1; l < out.layers.size(); ++l)
            for (std::size_t r = 0; r < out.layers[l].rows(); ++r) {
                auto row = out.layers[l].row(r);
                const double n = std::sqrt(dot(row, row));
                if (n != 0.0) EXPECT_NEAR(n, 1.0, 1e-9);
            }
    }
}

TEST(Forward, EvalModeIsBitReproducible) {
    std::mt19937_64 rng(13);
    ModelState s = fixtures::random_state(rng, fixtures::small_config(8, 3, {8, 6}, 2, 0.5), 10, 8);
    const auto graph = GraphOperators::build(fixtures::random_interactions(rng, 10, 8, 0.3));
    const auto a = forward(s, graph, false);
    const auto b = forward(s, graph, false);
    EXPECT_EQ(a.layers, b.layers);
    EXPECT_EQ(embed(s, graph).table, final_embeddings(a, 10).table);
}

TEST(Forward, DropoutMasksFollowTheSeed) {
    std::mt19937_64 rng(14);
    const ModelState base = fixtures::random_state(rng, fixtures::small_config(8, 3, {8, 6}, 2, 0.5), 10, 8);
    const auto graph = GraphOperators::build(fixtures::random_interactions(rng, 10, 8, 0.3));
    ModelState a = base;
    ModelState b = base;
    const auto oa = forward(a, graph, true);
    const auto ob = forward(b, graph, true);
    EXPECT_EQ(oa.layers, ob.layers);
    EXPECT_EQ(oa.caches[1].dropout_scale, ob.caches[1].dropout_scale);
    const auto again = forward(a, graph, true);
    EXPECT_NE(again.caches[1].dropout_scale, oa.caches[1].dropout_scale);
    for (double m : oa.caches[1].dropout_scale.values()) EXPECT_TRUE(m == 0.0 || m == 2.0);
}

TEST(FinalEmbeddings, ConcatenationLayout) {
    LayerOutputs out;
    out.layers = {Matrix(5, 4, 0.5), Matrix(5, 3), Matrix(5, 3)};
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t j = 0; j < 3; ++j) out.layers[1](r, j) = double(10 * r + j);
    const FinalEmbeddings z = final_embeddings(out, 2);
    EXPECT_EQ(z.table.cols(), 10u);
    EXPECT_EQ(z.num_diseases(), 3u);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(z.table(r, 4 + j), out.layers[1](r, j));

    LayerOutputs only_input;
    only_input.layers = {Matrix(5, 4, 0.5)};
    EXPECT_EQ(final_embeddings(only_input, 2).table, only_input.layers[0]);
}

TEST(FinalEmbeddings, WidthIsKPlusLayerDims) {
    ModelState s = init_state(fixtures::small_config(4, 1, {4, 3, 3}, 2), 3, Matrix(2, 1, 1.0));
    const auto graph = GraphOperators::build(InteractionMatrix(2, 3, {{0, 0, 0}, {1, 2, 0}}));
    EXPECT_EQ(embed(s, graph).table.cols(), 14u);
    EXPECT_EQ(s.config.final_dim(), 14u);
}

TEST(Score, DotProducts) {
    FinalEmbeddings z{Matrix(3, 3), 1};
    z.table(0, 0) = 1.0;
    z.table(1, 0) = 1.0;
    z.table(2, 1) = 1.0;
    EXPECT_EQ(score(z, 0, 0), 1.0);
    EXPECT_EQ(score(z, 0, 1), 0.0);

    std::mt19937_64 rng(15);
    FinalEmbeddings r{fixtures::random_matrix(rng, 7, 9), 3};
    for (std::size_t p = 0; p < 3; ++p)
        for (std::size_t d = 0; d < 4; ++d) {
            double s = 0.0;
            for (std::size_t j = 0; j < 9; ++j) s += r.table(p, j) * r.table(3 + d, j);
            EXPECT_NEAR(score(r, p, d), s, 1e-14);
        }
}

TEST(ScoreAll, SentinelsAndConsistency) {
    std::mt19937_64 rng(16);
    FinalEmbeddings z{fixtures::random_matrix(rng, 7, 5), 3};
    const std::vector<std::uint32_t> all{0, 1, 2, 3};
    for (double v : score_all(z, 1, all)) EXPECT_EQ(v, kExcludedScore);
    const auto none = score_all(z, 2, {});
    for (std::size_t d = 0; d < 4; ++d) EXPECT_EQ(none[d], score(z, 2, d));
}
