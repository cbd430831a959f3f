#include "cldd/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cldd/errors.hpp"

namespace cldd {

namespace {

constexpr double kNormGuard = 1e-12;

// Distinct streams per tensor and row so a row's initial value depends only on
// (seed, tensor, row).
void glorot_rows(Matrix& m, double bound, std::uint64_t seed, std::uint64_t tag) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(r),
                          static_cast<std::uint32_t>(r >> 32)};
        std::mt19937_64 gen(seq);
        for (double& v : m.row(r)) v = dist(gen);
    }
}

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void apply_dropout_and_norm(Matrix& activated, double rate, std::mt19937_64* rng,
                            bool train_mode, Matrix& out, LayerCache* cache) {
    if (train_mode && rate > 0.0) {
        if (rng == nullptr) throw StructuralError("dropout requires a random stream");
        std::bernoulli_distribution keep(1.0 - rate);
        const double scale = 1.0 / (1.0 - rate);
        Matrix mask(activated.rows(), activated.cols());
        auto mv = mask.values();
        auto av = activated.values();
        for (std::size_t i = 0; i < mv.size(); ++i) {
            mv[i] = keep(*rng) ? scale : 0.0;
            av[i] *= mv[i];
        }
        if (cache != nullptr) cache->dropout_scale = std::move(mask);
    }

    out = Matrix(activated.rows(), activated.cols());
    std::vector<double> norms(activated.rows());
    for (std::size_t r = 0; r < activated.rows(); ++r) {
        auto src = activated.row(r);
        const double n = std::sqrt(dot(src, src));
        norms[r] = n;
        if (n < kNormGuard) continue;
        auto dst = out.row(r);
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j] / n;
    }
    if (cache != nullptr) {
        cache->unnormalized = std::move(activated);
        cache->row_norms = std::move(norms);
    }
}

Matrix add_bias(Matrix m, const Matrix& bias) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias(0, j);
    }
    return m;
}

Matrix aggregate_layer(const ModelState& state, const SparseMatrix& edge_weights,
                       const Matrix& z0, std::mt19937_64* rng, bool train_mode,
                       LayerCache* cache) {
    const auto& w = state.params.layers.at(0).weight_gc;
    Matrix neighbor_sum = spmm(edge_weights, z0);
    Matrix pre = matmul(hadamard(z0, neighbor_sum), w);
    Matrix activated(pre.rows(), pre.cols());
    auto pv = pre.values();
    auto av = activated.values();
    for (std::size_t i = 0; i < pv.size(); ++i) av[i] = leaky_relu(pv[i], state.config.leaky_slope);
    if (cache != nullptr) {
        cache->signal = std::move(neighbor_sum);
        cache->pre_activation = std::move(pre);
    }
    Matrix out;
    apply_dropout_and_norm(activated, state.config.dropout.at(0), rng, train_mode, out, cache);
    return out;
}

Matrix propagate_impl(std::size_t layer, const NormalizedLaplacian& laplacian,
                      const Matrix& z_prev, const ModelState& state, std::mt19937_64* rng,
                      bool train_mode, LayerCache* cache) {
    if (layer == 0 || layer >= state.params.layers.size())
        throw StructuralError("propagate_layer: layer index out of range");
    const auto& p = state.params.layers[layer];
    if (z_prev.cols() != p.weight_gc.rows())
        throw StructuralError("propagate_layer: input width " + std::to_string(z_prev.cols()) +
                              " does not match d_{l-1} = " + std::to_string(p.weight_gc.rows()));
    if (z_prev.rows() != laplacian.num_nodes())
        throw StructuralError("propagate_layer: node count mismatch");

    const std::vector<double> beta = hop_weights(p.hop_logits);
    Matrix signal(z_prev.rows(), z_prev.cols());
    std::vector<Matrix> hops;
    Matrix term = z_prev;
    for (double b : beta) {
        term = spmm(laplacian.matrix, term);
        axpy(b, term, signal);
        if (cache != nullptr) hops.push_back(term);
    }

    Matrix pre = add_bias(matmul(signal, p.weight_gc), p.bias_gc);
    Matrix bilinear = add_bias(matmul(hadamard(z_prev, signal), p.weight_bi), p.bias_bi);
    axpy(1.0, bilinear, pre);

    Matrix activated(pre.rows(), pre.cols());
    auto pv = pre.values();
    auto av = activated.values();
    for (std::size_t i = 0; i < pv.size(); ++i) av[i] = leaky_relu(pv[i], state.config.leaky_slope);
    if (cache != nullptr) {
        cache->signal = std::move(signal);
        cache->hops = std::move(hops);
        cache->hop_weights = beta;
        cache->pre_activation = std::move(pre);
    }
    Matrix out;
    apply_dropout_and_norm(activated, state.config.dropout.at(layer), rng, train_mode, out, cache);
    return out;
}

LayerOutputs forward_impl(const ModelState& state, const GraphOperators& graph,
                          std::mt19937_64* rng, bool train_mode) {
    if (graph.num_patients != state.num_patients() || graph.num_diseases != state.num_diseases())
        throw StructuralError("forward: graph and model disagree on node counts");
    LayerOutputs out;
    out.train_mode = train_mode;
    out.layers.push_back(assemble_embeddings(state));
    const std::size_t num_layers = state.config.num_layers;
    if (train_mode) out.caches.resize(num_layers);
    for (std::size_t l = 0; l < num_layers; ++l) {
        LayerCache* cache = train_mode ? &out.caches[l] : nullptr;
        if (l == 0) {
            out.layers.push_back(
                aggregate_layer(state, graph.edge_weights, out.layers[0], rng, train_mode, cache));
        } else {
            out.layers.push_back(propagate_impl(l, graph.laplacian, out.layers[l], state, rng,
                                                train_mode, cache));
        }
    }
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    if (embedding_dim == 0) throw ConfigError("embedding width k must be >= 1");
    if (fixed_dim >= embedding_dim)
        throw ConfigError("fixed width f = " + std::to_string(fixed_dim) +
                          " must be smaller than k = " + std::to_string(embedding_dim));
    if (max_hop == 0) throw ConfigError("max hop order K must be >= 1");
    if (layer_dims.size() != num_layers)
        throw ConfigError("layer_dims must list one width per layer");
    if (dropout.size() != num_layers) throw ConfigError("dropout must list one rate per layer");
    for (std::size_t d : layer_dims)
        if (d == 0) throw ConfigError("layer widths must be >= 1");
    for (double r : dropout)
        if (!(r >= 0.0 && r < 1.0)) throw ConfigError("dropout rates must lie in [0, 1)");
    if (num_layers > 0 && layer_dims[0] != embedding_dim)
        throw ConfigError("the neighbor aggregation layer requires d_1 = k");
    if (!(leaky_slope > 0.0)) throw ConfigError("leaky slope must be > 0");
}

std::size_t ModelConfig::layer_input_dim(std::size_t layer) const {
    return layer == 0 ? embedding_dim : layer_dims.at(layer - 1);
}

std::size_t ModelConfig::final_dim() const {
    std::size_t w = embedding_dim;
    for (std::size_t d : layer_dims) w += d;
    return w;
}

std::vector<Matrix*> Parameters::tensors() {
    std::vector<Matrix*> out{&patient_learnable, &disease_embed};
    for (auto& l : layers) {
        out.insert(out.end(), {&l.weight_gc, &l.bias_gc, &l.weight_bi, &l.bias_bi, &l.hop_logits});
    }
    return out;
}

std::vector<const Matrix*> Parameters::tensors() const {
    std::vector<const Matrix*> out{&patient_learnable, &disease_embed};
    for (const auto& l : layers) {
        out.insert(out.end(), {&l.weight_gc, &l.bias_gc, &l.weight_bi, &l.bias_bi, &l.hop_logits});
    }
    return out;
}

std::vector<std::string> Parameters::tensor_names() const {
    std::vector<std::string> out{"patient_learnable", "disease_embed"};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l + 1) + ".";
        for (const char* n : {"weight_gc", "bias_gc", "weight_bi", "bias_bi", "hop_logits"})
            out.push_back(prefix + n);
    }
    return out;
}

Parameters Parameters::zeros_like() const {
    Parameters out = *this;
    for (Matrix* t : out.tensors()) t->fill(0.0);
    return out;
}

std::vector<double> hop_weights(const Matrix& hop_logits) {
    auto logits = hop_logits.values();
    std::vector<double> beta(logits.size());
    if (logits.empty()) return beta;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        beta[i] = std::exp(logits[i] - mx);
        total += beta[i];
    }
    for (double& b : beta) b /= total;
    return beta;
}

ModelState init_state(const ModelConfig& config, std::size_t num_diseases, const Matrix& features) {
    config.validate();
    if (features.cols() != config.fixed_dim)
        throw ConfigError("feature width " + std::to_string(features.cols()) +
                          " does not match f = " + std::to_string(config.fixed_dim));
    const std::size_t num_patients = features.rows();
    const std::size_t k = config.embedding_dim;

    ModelState state;
    state.config = config;
    state.patient_fixed = features;
    state.rng.seed(config.seed);

    auto& p = state.params;
    p.patient_learnable = Matrix(num_patients, config.learnable_dim());
    glorot_rows(p.patient_learnable, glorot_bound(config.learnable_dim(), num_patients),
                config.seed, 1);
    p.disease_embed = Matrix(num_diseases, k);
    glorot_rows(p.disease_embed, glorot_bound(k, num_diseases), config.seed, 2);

    for (std::size_t l = 0; l < config.num_layers; ++l) {
        const std::size_t in = config.layer_input_dim(l);
        const std::size_t out = config.layer_dims[l];
        LayerParams layer;
        layer.weight_gc = Matrix(in, out);
        glorot_rows(layer.weight_gc, glorot_bound(in, out), config.seed, 16 + 4 * l);
        if (l > 0) {
            layer.bias_gc = Matrix(1, out);
            layer.weight_bi = Matrix(in, out);
            glorot_rows(layer.weight_bi, glorot_bound(in, out), config.seed, 17 + 4 * l);
            layer.bias_bi = Matrix(1, out);
            layer.hop_logits = Matrix(1, config.max_hop);
        }
        p.layers.push_back(std::move(layer));
    }
    return state;
}

GraphOperators GraphOperators::build(const InteractionMatrix& y) {
    GraphOperators g;
    g.num_patients = y.num_patients();
    g.num_diseases = y.num_diseases();
    g.laplacian = normalize(build_adjacency(y), y.num_patients());
    g.edge_weights = edge_weight_operator(y);
    return g;
}

double leaky_relu(double x, double slope) noexcept { return x > 0.0 ? x : slope * x; }

Matrix assemble_embeddings(const ModelState& state) {
    const std::size_t num_patients = state.num_patients();
    const std::size_t k = state.config.embedding_dim;
    const std::size_t learnable = state.config.learnable_dim();
    Matrix z(num_patients + state.num_diseases(), k);
    for (std::size_t p = 0; p < num_patients; ++p) {
        auto dst = z.row(p);
        auto a = state.params.patient_learnable.row(p);
        auto b = state.patient_fixed.row(p);
        std::copy(a.begin(), a.end(), dst.begin());
        std::copy(b.begin(), b.end(), dst.begin() + static_cast<std::ptrdiff_t>(learnable));
    }
    for (std::size_t d = 0; d < state.num_diseases(); ++d) {
        auto src = state.params.disease_embed.row(d);
        std::copy(src.begin(), src.end(), z.row(num_patients + d).begin());
    }
    return z;
}

Matrix first_order_aggregate(const ModelState& state, const InteractionMatrix& y) {
    if (state.params.layers.empty())
        throw StructuralError("first_order_aggregate: model has no layers");
    if (y.num_patients() != state.num_patients() || y.num_diseases() != state.num_diseases())
        throw StructuralError("first_order_aggregate: interaction shape mismatch");
    const Matrix z0 = assemble_embeddings(state);
    Matrix pre = matmul(hadamard(z0, spmm(edge_weight_operator(y), z0)),
                        state.params.layers[0].weight_gc);
    for (double& v : pre.values()) v = leaky_relu(v, state.config.leaky_slope);
    return pre;
}

Matrix hop_mix(const NormalizedLaplacian& laplacian, const Matrix& z_prev,
               std::span<const double> beta) {
    Matrix signal(z_prev.rows(), z_prev.cols());
    Matrix term = z_prev;
    for (double b : beta) {
        term = spmm(laplacian.matrix, term);
        axpy(b, term, signal);
    }
    return signal;
}

Matrix propagate_layer(std::size_t layer, const NormalizedLaplacian& laplacian,
                       const Matrix& z_prev, ModelState& state, bool train_mode,
                       LayerCache* cache) {
    return propagate_impl(layer, laplacian, z_prev, state, &state.rng, train_mode, cache);
}

LayerOutputs forward(ModelState& state, const GraphOperators& graph, bool train_mode) {
    return forward_impl(state, graph, &state.rng, train_mode);
}

FinalEmbeddings final_embeddings(const LayerOutputs& outputs, std::size_t num_patients) {
    return {hconcat(outputs.layers), num_patients};
}

double score(const FinalEmbeddings& z, std::size_t patient, std::size_t disease) {
    return dot(z.patient(patient), z.disease(disease));
}

std::vector<double> score_all(const FinalEmbeddings& z, std::size_t patient,
                              std::span<const std::uint32_t> exclude) {
    const std::size_t num_diseases = z.num_diseases();
    std::vector<double> out(num_diseases);
    auto zp = z.patient(patient);
    for (std::size_t d = 0; d < num_diseases; ++d) out[d] = dot(zp, z.disease(d));
    for (std::uint32_t d : exclude) out.at(d) = kExcludedScore;
    return out;
}

FinalEmbeddings embed(const ModelState& state, const GraphOperators& graph) {
    return final_embeddings(forward_impl(state, graph, nullptr, false), state.num_patients());
}

}  // namespace cldd
