#include "cldd/training.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <ostream>

#include <fmt/format.h>

#include "cldd/errors.hpp"

namespace cldd {

namespace {

void add_regularizer_grad(GradientBuffer& grads, const Parameters& params, double l2, bool all) {
    if (l2 == 0.0) return;
    auto g = grads.tensors();
    auto p = params.tensors();
    const std::size_t count = all ? g.size() : 2;
    for (std::size_t i = 0; i < count; ++i) axpy(2.0 * l2, *p[i], *g[i]);
}

// Through RowNorm2, dropout and LeakyReLU: returns ∂L/∂(pre-activation).
Matrix backprop_activation(const Matrix& grad_out, const Matrix& z_out, const LayerCache& cache,
                           double slope) {
    Matrix grad(grad_out.rows(), grad_out.cols());
    for (std::size_t r = 0; r < grad.rows(); ++r) {
        const double n = cache.row_norms[r];
        if (n < 1e-12) continue;
        auto g = grad_out.row(r);
        auto z = z_out.row(r);
        const double proj = dot(z, g);
        auto dst = grad.row(r);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = (g[j] - z[j] * proj) / n;
    }
    auto gv = grad.values();
    if (!cache.dropout_scale.empty()) {
        auto mv = cache.dropout_scale.values();
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= mv[i];
    }
    auto pv = cache.pre_activation.values();
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= pv[i] > 0.0 ? 1.0 : slope;
    return grad;
}

Matrix features_for(const Dataset& dataset, const ModelConfig& config) {
    if (config.fixed_dim == 0) return Matrix(dataset.num_patients(), 0);
    if (config.fixed_dim != dataset.features.cols())
        throw ConfigError(fmt::format("fixed width f = {} but the dataset encodes {} attribute columns",
                                      config.fixed_dim, dataset.features.cols()));
    return dataset.features;
}

bool all_finite(const Parameters& p) {
    for (const Matrix* t : p.tensors())
        for (double v : t->values())
            if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (!(l2 >= 0.0)) throw ConfigError("l2 weight must be >= 0");
    if (negatives_per_positive == 0) throw ConfigError("negatives per positive must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("Adam epsilon must be > 0");
}

AdamState AdamState::zeros_like(const Parameters& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
}

double softplus(double x) noexcept {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double pairwise_loss(std::span<const Triple> batch, const FinalEmbeddings& z) {
    double total = 0.0;
    for (const auto& t : batch) {
        const double diff = score(z, t.patient, t.positive) - score(z, t.patient, t.negative);
        total += softplus(-diff);
    }
    return total;
}

double squared_norm(const Parameters& params, bool all_tensors) {
    auto ts = params.tensors();
    const std::size_t count = all_tensors ? ts.size() : 2;
    double total = 0.0;
    for (std::size_t i = 0; i < count; ++i) total += dot(ts[i]->values(), ts[i]->values());
    return total;
}

double bpr_loss(std::span<const Triple> batch, const FinalEmbeddings& z, const ModelState& state,
                double l2, bool regularize_all) {
    if (batch.empty()) throw StructuralError("bpr_loss: empty batch");
    return pairwise_loss(batch, z) + l2 * squared_norm(state.params, regularize_all);
}

GradientBuffer backward(std::span<const Triple> batch, const LayerOutputs& outputs,
                        const ModelState& state, const GraphOperators& graph, double l2,
                        bool regularize_all) {
    const auto& config = state.config;
    const std::size_t num_layers = config.num_layers;
    const std::size_t num_p = state.num_patients();
    if (!outputs.train_mode || outputs.caches.size() != num_layers ||
        outputs.layers.size() != num_layers + 1 ||
        outputs.layers[0].rows() != num_p + state.num_diseases() ||
        outputs.layers[0].cols() != config.embedding_dim) {
        throw StructuralError("backward: outputs do not come from a train-mode forward of this state");
    }

    // ∂L/∂Z for the concatenated embeddings, one block per layer.
    std::vector<Matrix> grad_layers;
    grad_layers.reserve(outputs.layers.size());
    for (const auto& z : outputs.layers) grad_layers.emplace_back(z.rows(), z.cols());

    for (const auto& t : batch) {
        const std::size_t p = t.patient;
        const std::size_t pos = num_p + t.positive;
        const std::size_t neg = num_p + t.negative;
        double diff = 0.0;
        for (const auto& z : outputs.layers) diff += dot(z.row(p), z.row(pos)) - dot(z.row(p), z.row(neg));
        const double coeff = -sigmoid(-diff);
        for (std::size_t l = 0; l < outputs.layers.size(); ++l) {
            const auto& z = outputs.layers[l];
            auto& g = grad_layers[l];
            auto zp = z.row(p);
            auto zpos = z.row(pos);
            auto zneg = z.row(neg);
            auto gp = g.row(p);
            auto gpos = g.row(pos);
            auto gneg = g.row(neg);
            for (std::size_t j = 0; j < zp.size(); ++j) {
                gp[j] += coeff * (zpos[j] - zneg[j]);
                gpos[j] += coeff * zp[j];
                gneg[j] -= coeff * zp[j];
            }
        }
    }

    GradientBuffer grads = state.params.zeros_like();
    for (std::size_t l = num_layers; l-- > 0;) {
        const LayerCache& cache = outputs.caches[l];
        const Matrix& z_in = outputs.layers[l];
        const Matrix d_pre =
            backprop_activation(grad_layers[l + 1], outputs.layers[l + 1], cache, config.leaky_slope);
        const auto& params = state.params.layers[l];
        auto& g = grads.layers[l];

        if (l == 0) {
            // pre = (Z ∘ N) W with N = W_edge Z.
            const Matrix& neighbor_sum = cache.signal;
            g.weight_gc = matmul_tn(hadamard(z_in, neighbor_sum), d_pre);
            const Matrix d_msg = matmul_nt(d_pre, params.weight_gc);
            axpy(1.0, hadamard(d_msg, neighbor_sum), grad_layers[0]);
            axpy(1.0, spmm(graph.edge_weights, hadamard(d_msg, z_in)), grad_layers[0]);
            continue;
        }

        const Matrix& signal = cache.signal;
        g.weight_gc = matmul_tn(signal, d_pre);
        g.weight_bi = matmul_tn(hadamard(z_in, signal), d_pre);
        const auto bias_grad = column_sums(d_pre);
        std::copy(bias_grad.begin(), bias_grad.end(), g.bias_gc.values().begin());
        std::copy(bias_grad.begin(), bias_grad.end(), g.bias_bi.values().begin());

        const Matrix d_bilinear = matmul_nt(d_pre, params.weight_bi);
        Matrix d_signal = matmul_nt(d_pre, params.weight_gc);
        axpy(1.0, hadamard(d_bilinear, z_in), d_signal);
        Matrix d_in = hadamard(d_bilinear, signal);

        // S = Σ β_i Â^i Z_in; Â is symmetric, so the adjoint applies Â again.
        const auto& beta = cache.hop_weights;
        std::vector<double> d_beta(beta.size());
        Matrix term = d_signal;
        for (std::size_t i = 0; i < beta.size(); ++i) {
            d_beta[i] = frobenius_dot(d_signal, cache.hops[i]);
            term = spmm(graph.laplacian.matrix, term);
            axpy(beta[i], term, d_in);
        }
        double weighted = 0.0;
        for (std::size_t i = 0; i < beta.size(); ++i) weighted += beta[i] * d_beta[i];
        for (std::size_t i = 0; i < beta.size(); ++i)
            g.hop_logits(0, i) = beta[i] * (d_beta[i] - weighted);

        axpy(1.0, d_in, grad_layers[l]);
    }

    const Matrix& d_z0 = grad_layers[0];
    // Columns [k - f, k) of patient rows belong to the frozen attributes and are dropped.
    for (std::size_t p = 0; p < num_p; ++p) {
        auto src = d_z0.row(p);
        std::copy(src.begin(),
                  src.begin() + static_cast<std::ptrdiff_t>(config.learnable_dim()),
                  grads.patient_learnable.row(p).begin());
    }
    for (std::size_t d = 0; d < state.num_diseases(); ++d) {
        auto src = d_z0.row(num_p + d);
        std::copy(src.begin(), src.end(), grads.disease_embed.row(d).begin());
    }

    add_regularizer_grad(grads, state.params, l2, regularize_all);
    return grads;
}

void adam_step(ModelState& state, const GradientBuffer& grads, AdamState& adam,
               const TrainConfig& config) {
    auto params = state.params.tensors();
    auto g = grads.tensors();
    auto m = adam.first_moment.tensors();
    auto v = adam.second_moment.tensors();
    if (g.size() != params.size() || m.size() != params.size())
        throw StructuralError("adam_step: gradient layout does not match parameters");
    const auto names = state.params.tensor_names();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (g[i]->rows() != params[i]->rows() || g[i]->cols() != params[i]->cols())
            throw StructuralError("adam_step: shape mismatch in " + names[i]);
        auto gv = g[i]->values();
        for (std::size_t j = 0; j < gv.size(); ++j) {
            if (!std::isfinite(gv[j]))
                throw DivergenceError(fmt::format("non-finite gradient in {} at flat index {}",
                                                  names[i], j));
        }
    }

    ++adam.step;
    const double t = static_cast<double>(adam.step);
    const double correction1 = 1.0 - std::pow(config.beta1, t);
    const double correction2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto pv = params[i]->values();
        auto gv = g[i]->values();
        auto mv = m[i]->values();
        auto vv = v[i]->values();
        for (std::size_t j = 0; j < pv.size(); ++j) {
            mv[j] = config.beta1 * mv[j] + (1.0 - config.beta1) * gv[j];
            vv[j] = config.beta2 * vv[j] + (1.0 - config.beta2) * gv[j] * gv[j];
            const double m_hat = mv[j] / correction1;
            const double v_hat = vv[j] / correction2;
            pv[j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
        }
    }
}

TripleSampler::TripleSampler(const InteractionMatrix& train) : train_(&train) {
    for (std::uint32_t p = 0; p < train.num_patients(); ++p) {
        const auto degree = train.patient_degree(p);
        if (degree == 0) continue;
        if (degree >= train.num_diseases()) {
            skipped_.push_back(p);
            continue;
        }
        for (std::uint32_t d : train.diseases_of(p)) positives_.push_back({p, d, 0});
    }
    if (!skipped_.empty()) {
        std::clog << "warning: " << skipped_.size()
                  << " patient(s) have every disease as a training positive and are skipped\n";
    }
}

std::uint32_t TripleSampler::draw_negative(std::mt19937_64& rng, std::uint32_t patient) const {
    std::uniform_int_distribution<std::uint32_t> pick(
        0, static_cast<std::uint32_t>(train_->num_diseases() - 1));
    while (true) {
        const std::uint32_t d = pick(rng);
        if (!train_->contains(patient, d)) return d;
    }
}

std::vector<Triple> TripleSampler::sample(std::mt19937_64& rng, std::size_t count) const {
    std::vector<Triple> out;
    if (positives_.empty()) return out;
    out.reserve(count);
    std::uniform_int_distribution<std::size_t> pick(0, positives_.size() - 1);
    for (std::size_t i = 0; i < count; ++i) {
        const auto& e = positives_[pick(rng)];
        out.push_back({e.patient, e.disease, draw_negative(rng, e.patient)});
    }
    return out;
}

std::vector<std::vector<Triple>> TripleSampler::epoch(std::mt19937_64& rng, std::size_t batch_size,
                                                      std::size_t negatives) const {
    std::vector<std::size_t> order(positives_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<Triple>> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        std::vector<Triple> batch;
        batch.reserve((end - start) * negatives);
        for (std::size_t i = start; i < end; ++i) {
            const auto& e = positives_[order[i]];
            for (std::size_t n = 0; n < negatives; ++n)
                batch.push_back({e.patient, e.disease, draw_negative(rng, e.patient)});
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

FitResult fit_state(ModelState state, const InteractionMatrix& train, const TrainConfig& config,
                    const EpochCallback& on_epoch) {
    config.validate();
    if (train.num_patients() != state.num_patients() || train.num_diseases() != state.num_diseases())
        throw StructuralError("fit: training interactions do not match the model shape");

    FitResult result;
    const GraphOperators graph = GraphOperators::build(train);
    const TripleSampler sampler(train);
    std::mt19937_64 rng(config.seed);
    std::mt19937_64 probe_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    const std::vector<Triple> probe = sampler.sample(probe_rng, 256);
    AdamState adam = AdamState::zeros_like(state.params);
    ModelState last_good = state;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        std::size_t triples = 0;
        try {
            for (const auto& batch : sampler.epoch(rng, config.batch_size,
                                                   config.negatives_per_positive)) {
                LayerOutputs outputs = forward(state, graph, true);
                const FinalEmbeddings z = final_embeddings(outputs, state.num_patients());
                const double loss = bpr_loss(batch, z, state, config.l2, config.regularize_all);
                if (!std::isfinite(loss))
                    throw DivergenceError(fmt::format("non-finite loss in epoch {}", epoch));
                loss_sum += loss;
                triples += batch.size();
                const GradientBuffer grads =
                    backward(batch, outputs, state, graph, config.l2, config.regularize_all);
                adam_step(state, grads, adam, config);
            }
            if (!all_finite(state.params))
                throw DivergenceError(fmt::format("non-finite parameters after epoch {}", epoch));
        } catch (const DivergenceError& e) {
            result.state = std::move(last_good);
            result.diverged = true;
            result.diagnostic = e.what();
            return result;
        }

        EpochRecord record;
        record.epoch = epoch;
        record.mean_loss = triples == 0 ? 0.0 : loss_sum / static_cast<double>(triples);
        record.probe_loss = probe.empty() ? 0.0
                                           : pairwise_loss(probe, embed(state, graph)) /
                                                 static_cast<double>(probe.size());
        record.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!std::isfinite(record.probe_loss) || !std::isfinite(record.mean_loss)) {
            result.state = std::move(last_good);
            result.diverged = true;
            result.diagnostic = fmt::format("non-finite probe loss after epoch {}", epoch);
            return result;
        }
        result.log.push_back(record);
        last_good = state;
        if (on_epoch) on_epoch(record, state);
    }
    result.state = std::move(state);
    return result;
}

FitResult fit(const Dataset& dataset, const ModelConfig& model_config,
              const TrainConfig& train_config, const EpochCallback& on_epoch) {
    ModelState state =
        init_state(model_config, dataset.num_diseases(), features_for(dataset, model_config));
    return fit_state(std::move(state), dataset.train, train_config, on_epoch);
}

void write_training_log(std::ostream& out, std::span<const EpochRecord> log) {
    out << "epoch,mean_loss,wall_seconds\n";
    for (const auto& r : log)
        out << r.epoch << ',' << fmt::format("{:.17g}", r.mean_loss) << ','
            << fmt::format("{:.3f}", r.wall_seconds) << '\n';
}

}  // namespace cldd
