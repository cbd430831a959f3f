#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cldd/dense.hpp"
#include "cldd/graph.hpp"

namespace cldd {

struct ModelConfig {
    std::size_t embedding_dim = 64;  ///< k
    std::size_t fixed_dim = 43;      ///< f, width of the frozen attribute block
    std::size_t num_layers = 3;      ///< L; 0 gives plain matrix factorization
    std::size_t max_hop = 3;         ///< K
    std::vector<std::size_t> layer_dims{64, 64, 64};
    std::vector<double> dropout{0.1, 0.1, 0.1};
    double leaky_slope = 0.2;
    std::uint64_t seed = 42;

    /// Throws ConfigError on violated invariants.
    void validate() const;

    std::size_t learnable_dim() const noexcept { return embedding_dim - fixed_dim; }
    std::size_t layer_input_dim(std::size_t layer) const;
    /// k + Σ d_l
    std::size_t final_dim() const;

    bool operator==(const ModelConfig&) const = default;
};

/// Trainable parameters. Also used as the layout for gradients and optimizer moments.
///
/// Layer 0 is the neighbor aggregation layer and only owns weight_gc (k × k); its
/// other tensors are empty. Layers 1.. are hop-mixed propagation layers.
struct LayerParams {
    Matrix weight_gc;   ///< d_{l-1} × d_l
    Matrix bias_gc;     ///< 1 × d_l
    Matrix weight_bi;   ///< d_{l-1} × d_l
    Matrix bias_bi;     ///< 1 × d_l
    Matrix hop_logits;  ///< 1 × K

    bool operator==(const LayerParams&) const = default;
};

struct Parameters {
    Matrix patient_learnable;  ///< P × (k - f)
    Matrix disease_embed;      ///< D × k
    std::vector<LayerParams> layers;

    /// Every tensor in a fixed order, paired with tensor_names().
    std::vector<Matrix*> tensors();
    std::vector<const Matrix*> tensors() const;
    std::vector<std::string> tensor_names() const;

    /// Same shapes, all zeros.
    Parameters zeros_like() const;

    bool operator==(const Parameters&) const = default;
};

struct ModelState {
    ModelConfig config;
    Parameters params;
    Matrix patient_fixed;  ///< P × f, never updated
    std::mt19937_64 rng;   ///< dropout stream

    std::size_t num_patients() const noexcept { return patient_fixed.rows(); }
    std::size_t num_diseases() const noexcept { return params.disease_embed.rows(); }
};

/// Softmax of the hop logits of one layer.
std::vector<double> hop_weights(const Matrix& hop_logits);

ModelState init_state(const ModelConfig& config, std::size_t num_diseases, const Matrix& features);

/// Sparse operators derived once from the training interactions.
struct GraphOperators {
    NormalizedLaplacian laplacian;  ///< with self-loops, for propagation layers
    SparseMatrix edge_weights;      ///< w_pd without self-loops, for neighbor aggregation
    std::size_t num_patients = 0;
    std::size_t num_diseases = 0;

    static GraphOperators build(const InteractionMatrix& y);
    std::size_t num_nodes() const noexcept { return num_patients + num_diseases; }
};

/// Intermediates of one layer, kept for the backward pass.
struct LayerCache {
    Matrix signal;               ///< S (propagation) or Σ w_pd z_neighbor (aggregation)
    std::vector<Matrix> hops;    ///< Â^i Z_prev for i = 1..K (propagation only)
    std::vector<double> hop_weights;
    Matrix pre_activation;       ///< G + B, or the aggregation transform output
    Matrix dropout_scale;        ///< 0 or 1/(1-ρ) per entry; empty when dropout inactive
    Matrix unnormalized;         ///< rows before RowNorm2
    std::vector<double> row_norms;
};

struct LayerOutputs {
    std::vector<Matrix> layers;  ///< Z^(0)..Z^(L)
    std::vector<LayerCache> caches;
    bool train_mode = false;
};

struct FinalEmbeddings {
    Matrix table;  ///< (P+D) × (k + Σ d_l)
    std::size_t num_patients = 0;

    std::size_t num_diseases() const noexcept { return table.rows() - num_patients; }
    std::span<const double> patient(std::size_t p) const { return table.row(p); }
    std::span<const double> disease(std::size_t d) const { return table.row(num_patients + d); }
};

inline constexpr double kExcludedScore = -std::numeric_limits<double>::infinity();

double leaky_relu(double x, double slope) noexcept;

/// [patient_learnable | patient_fixed ; disease_embed]
Matrix assemble_embeddings(const ModelState& state);

/// LeakyReLU(Σ_{d∈N_p} w_pd (z_d ∘ z_p) W) for every node, with W = layer-0 weight_gc.
Matrix first_order_aggregate(const ModelState& state, const InteractionMatrix& y);

/// Σ_i β_i Â^i Z, applying Â by repeated spmm.
Matrix hop_mix(const NormalizedLaplacian& laplacian, const Matrix& z_prev,
               std::span<const double> beta);

/// Hop-mixed propagation layer (layer >= 1, zero-based).
Matrix propagate_layer(std::size_t layer, const NormalizedLaplacian& laplacian,
                       const Matrix& z_prev, ModelState& state, bool train_mode,
                       LayerCache* cache = nullptr);

LayerOutputs forward(ModelState& state, const GraphOperators& graph, bool train_mode);

/// Z^(0) || Z^(1) || ... || Z^(L)
FinalEmbeddings final_embeddings(const LayerOutputs& outputs, std::size_t num_patients);

/// Inner product of the final patient and disease rows.
double score(const FinalEmbeddings& z, std::size_t patient, std::size_t disease);

/// Scores over all diseases; entries listed in `exclude` carry kExcludedScore.
std::vector<double> score_all(const FinalEmbeddings& z, std::size_t patient,
                              std::span<const std::uint32_t> exclude);

/// Eval-mode forward followed by concatenation.
FinalEmbeddings embed(const ModelState& state, const GraphOperators& graph);

}  // namespace cldd
