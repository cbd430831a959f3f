#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cldd/data.hpp"
#include "cldd/graph.hpp"
#include "cldd/model.hpp"

namespace cldd {

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 1024;
    std::size_t epochs = 30;
    double l2 = 1e-5;  ///< λ
    std::size_t negatives_per_positive = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 7;
    /// Regularize every trainable tensor (true) or only the embedding tables.
    bool regularize_all = true;

    void validate() const;

    bool operator==(const TrainConfig&) const = default;
};

struct Triple {
    std::uint32_t patient = 0;
    std::uint32_t positive = 0;
    std::uint32_t negative = 0;

    bool operator==(const Triple&) const = default;
};

/// Same layout as the trainable parameters; patient_fixed has no slot.
using GradientBuffer = Parameters;

struct AdamState {
    Parameters first_moment;
    Parameters second_moment;
    std::uint64_t step = 0;

    static AdamState zeros_like(const Parameters& params);
};

double softplus(double x) noexcept;
double sigmoid(double x) noexcept;

/// Σ −ln σ(x̂_pos − x̂_neg) over the batch.
double pairwise_loss(std::span<const Triple> batch, const FinalEmbeddings& z);

/// ‖Θ‖² over trainable tensors (or embedding tables only).
double squared_norm(const Parameters& params, bool all_tensors = true);

/// Pairwise term plus λ‖Θ‖².
double bpr_loss(std::span<const Triple> batch, const FinalEmbeddings& z, const ModelState& state,
                double l2, bool regularize_all = true);

/// Exact gradient of bpr_loss through the whole forward pass recorded in `outputs`.
/// Throws StructuralError if `outputs` was not produced by a train-mode forward
/// of `state`.
GradientBuffer backward(std::span<const Triple> batch, const LayerOutputs& outputs,
                        const ModelState& state, const GraphOperators& graph, double l2,
                        bool regularize_all = true);

/// Bias-corrected Adam update. Throws DivergenceError (and leaves the state untouched)
/// if any gradient entry is non-finite.
void adam_step(ModelState& state, const GradientBuffer& grads, AdamState& adam,
               const TrainConfig& config);

/// Draws (patient, positive, negative) triples from the training interactions.
class TripleSampler {
public:
    explicit TripleSampler(const InteractionMatrix& train);

    /// One uniformly drawn training positive per triple.
    std::vector<Triple> sample(std::mt19937_64& rng, std::size_t count) const;

    /// All training positives in shuffled order, split into batches of `batch_size`
    /// positives with `negatives` triples each.
    std::vector<std::vector<Triple>> epoch(std::mt19937_64& rng, std::size_t batch_size,
                                           std::size_t negatives) const;

    std::uint32_t draw_negative(std::mt19937_64& rng, std::uint32_t patient) const;

    /// Patients whose positives cover every disease; they never yield triples.
    std::span<const std::uint32_t> skipped_patients() const noexcept { return skipped_; }
    std::size_t num_usable_positives() const noexcept { return positives_.size(); }

private:
    const InteractionMatrix* train_;
    std::vector<Interaction> positives_;
    std::vector<std::uint32_t> skipped_;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_loss = 0.0;  ///< mean per-triple loss over the epoch's batches
    double probe_loss = 0.0; ///< eval-mode mean pairwise loss of a fixed probe batch after the epoch
    double wall_seconds = 0.0;
};

struct FitResult {
    ModelState state;  ///< final state, or last good state after divergence
    std::vector<EpochRecord> log;
    bool diverged = false;
    std::string diagnostic;
};

/// Called after each completed epoch with the current state.
using EpochCallback = std::function<void(const EpochRecord&, const ModelState&)>;

FitResult fit_state(ModelState state, const InteractionMatrix& train, const TrainConfig& config,
                    const EpochCallback& on_epoch = {});

FitResult fit(const Dataset& dataset, const ModelConfig& model_config,
              const TrainConfig& train_config, const EpochCallback& on_epoch = {});

/// CSV `epoch,mean_loss,wall_seconds`.
void write_training_log(std::ostream& out, std::span<const EpochRecord> log);

}  // namespace cldd
