#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cldd/data.hpp"
#include "cldd/graph.hpp"
#include "cldd/model.hpp"

namespace fixtures {

/// Each (p, d) present with probability `density`; every patient keeps at least one edge
/// unless `allow_isolated`.
inline cldd::InteractionMatrix random_interactions(std::mt19937_64& rng, std::size_t patients,
                                                   std::size_t diseases, double density,
                                                   bool allow_isolated = false) {
    std::bernoulli_distribution coin(density);
    std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(diseases - 1));
    std::vector<cldd::Interaction> entries;
    for (std::uint32_t p = 0; p < patients; ++p) {
        bool any = false;
        for (std::uint32_t d = 0; d < diseases; ++d) {
            if (coin(rng)) {
                entries.push_back({p, d, 0});
                any = true;
            }
        }
        if (!any && !allow_isolated) entries.push_back({p, pick(rng), 0});
    }
    return {patients, diseases, std::move(entries)};
}

inline cldd::Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                  double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    cldd::Matrix m(rows, cols);
    for (double& v : m.values()) v = n(rng);
    return m;
}

inline cldd::ModelConfig small_config(std::size_t k, std::size_t f, std::vector<std::size_t> dims,
                                      std::size_t hops, double dropout = 0.0) {
    cldd::ModelConfig c;
    c.embedding_dim = k;
    c.fixed_dim = f;
    c.num_layers = dims.size();
    c.layer_dims = std::move(dims);
    c.dropout.assign(c.num_layers, dropout);
    c.max_hop = hops;
    c.seed = 11;
    return c;
}

/// A state whose biases and hop logits are also randomized, so every tensor matters.
inline cldd::ModelState random_state(std::mt19937_64& rng, const cldd::ModelConfig& config,
                                     std::size_t patients, std::size_t diseases) {
    cldd::Matrix features = random_matrix(rng, patients, config.fixed_dim);
    cldd::ModelState state = cldd::init_state(config, diseases, features);
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& layer : state.params.layers) {
        for (cldd::Matrix* m : {&layer.bias_gc, &layer.bias_bi, &layer.hop_logits})
            for (double& v : m->values()) v = n(rng);
    }
    return state;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    // Per-process suffix: ctest runs discovered tests concurrently.
    auto dir = std::filesystem::temp_directory_path() /
               ("cldd_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fixtures
