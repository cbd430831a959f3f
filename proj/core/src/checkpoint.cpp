#include "cldd/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "cldd/errors.hpp"

namespace cldd {

namespace {

using json = nlohmann::ordered_json;

json tensor_json(const Matrix& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    j["data"] = std::vector<double>(m.values().begin(), m.values().end());
    return j;
}

Matrix tensor_from(const json& j, const std::string& name) {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != rows * cols)
        throw DataError("checkpoint tensor '" + name + "' has inconsistent size");
    Matrix m(rows, cols);
    std::copy(data.begin(), data.end(), m.values().begin());
    return m;
}

}  // namespace

void to_json(json& j, const ModelConfig& c) {
    j = json{{"embedding_dim", c.embedding_dim}, {"fixed_dim", c.fixed_dim},
             {"num_layers", c.num_layers},       {"max_hop", c.max_hop},
             {"layer_dims", c.layer_dims},       {"dropout", c.dropout},
             {"leaky_slope", c.leaky_slope},     {"seed", c.seed}};
}

void from_json(const json& j, ModelConfig& c) {
    j.at("embedding_dim").get_to(c.embedding_dim);
    j.at("fixed_dim").get_to(c.fixed_dim);
    j.at("num_layers").get_to(c.num_layers);
    j.at("max_hop").get_to(c.max_hop);
    j.at("layer_dims").get_to(c.layer_dims);
    j.at("dropout").get_to(c.dropout);
    j.at("leaky_slope").get_to(c.leaky_slope);
    j.at("seed").get_to(c.seed);
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"learning_rate", c.learning_rate},
             {"batch_size", c.batch_size},
             {"epochs", c.epochs},
             {"l2", c.l2},
             {"negatives_per_positive", c.negatives_per_positive},
             {"beta1", c.beta1},
             {"beta2", c.beta2},
             {"epsilon", c.epsilon},
             {"seed", c.seed},
             {"regularize_all", c.regularize_all}};
}

void from_json(const json& j, TrainConfig& c) {
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("batch_size").get_to(c.batch_size);
    j.at("epochs").get_to(c.epochs);
    j.at("l2").get_to(c.l2);
    j.at("negatives_per_positive").get_to(c.negatives_per_positive);
    j.at("beta1").get_to(c.beta1);
    j.at("beta2").get_to(c.beta2);
    j.at("epsilon").get_to(c.epsilon);
    j.at("seed").get_to(c.seed);
    j.at("regularize_all").get_to(c.regularize_all);
}

void save_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
    const ModelState& state = checkpoint.state;
    json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["config"] = state.config;
    j["num_patients"] = state.num_patients();
    j["num_diseases"] = state.num_diseases();
    json tensors = json::object();
    const auto names = state.params.tensor_names();
    const auto ts = state.params.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) tensors[names[i]] = tensor_json(*ts[i]);
    j["tensors"] = std::move(tensors);
    j["patient_fixed"] = tensor_json(state.patient_fixed);
    std::ostringstream rng;
    rng << state.rng;
    j["rng_state"] = rng.str();
    j["metadata"] = checkpoint.metadata;
    out << j.dump() << '\n';
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    save_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(std::istream& in) {
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
    }
    try {
        const int version = j.at("format_version").get<int>();
        if (version != kCheckpointFormatVersion)
            throw DataError("unsupported checkpoint format_version " + std::to_string(version));
        Checkpoint cp;
        ModelState& state = cp.state;
        state.config = j.at("config").get<ModelConfig>();
        state.config.validate();
        state.patient_fixed = tensor_from(j.at("patient_fixed"), "patient_fixed");
        const auto num_patients = j.at("num_patients").get<std::size_t>();
        const auto num_diseases = j.at("num_diseases").get<std::size_t>();

        // Start from a correctly shaped state, then overwrite every tensor.
        ModelState shaped = init_state(state.config, num_diseases, state.patient_fixed);
        if (shaped.num_patients() != num_patients)
            throw DataError("checkpoint patient count disagrees with patient_fixed");
        state.params = std::move(shaped.params);
        const auto names = state.params.tensor_names();
        auto ts = state.params.tensors();
        const auto& tensors = j.at("tensors");
        for (std::size_t i = 0; i < ts.size(); ++i) {
            Matrix m = tensor_from(tensors.at(names[i]), names[i]);
            if (m.rows() != ts[i]->rows() || m.cols() != ts[i]->cols())
                throw DataError("checkpoint tensor '" + names[i] + "' has the wrong shape");
            *ts[i] = std::move(m);
        }
        std::istringstream rng(j.at("rng_state").get<std::string>());
        rng >> state.rng;
        if (!rng) throw DataError("checkpoint rng_state is malformed");
        if (j.contains("metadata")) cp.metadata = j.at("metadata");
        return cp;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint config invalid: ") + e.what());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    return load_checkpoint(in);
}

}  // namespace cldd
