#pragma once

#include <filesystem>
#include <iosfwd>

#include <nlohmann/json.hpp>

#include "cldd/model.hpp"
#include "cldd/training.hpp"

namespace cldd {

inline constexpr int kCheckpointFormatVersion = 1;

void to_json(nlohmann::ordered_json& j, const ModelConfig& c);
void from_json(const nlohmann::ordered_json& j, ModelConfig& c);
void to_json(nlohmann::ordered_json& j, const TrainConfig& c);
void from_json(const nlohmann::ordered_json& j, TrainConfig& c);

struct Checkpoint {
    ModelState state;
    /// Free-form provenance (data preparation settings, training config, ...).
    nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
};

/// JSON container: format_version, model config, every tensor (row-major float64),
/// the frozen attribute block, the dropout stream state and `metadata`.
void save_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Throws DataError on version mismatch or inconsistent shapes.
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cldd
