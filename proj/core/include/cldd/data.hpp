#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cldd/dense.hpp"
#include "cldd/graph.hpp"

namespace cldd {

inline constexpr std::size_t kAgeBuckets = 9;
inline constexpr std::size_t kRaceCategories = 33;
/// 9 age buckets + 1 gender bit + 33 race categories.
inline constexpr std::size_t kFeatureWidth = kAgeBuckets + 1 + kRaceCategories;

enum class Gender { Male, Female };

struct RawInteraction {
    std::string patient_id;
    std::string disease_code;
    std::int64_t admit_time = 0;

    bool operator==(const RawInteraction&) const = default;
};

struct Demographics {
    std::string patient_id;
    int age = 18;  ///< ages above 89 are stored as 91
    Gender gender = Gender::Male;
    int race = 0;  ///< 0..32

    bool operator==(const Demographics&) const = default;
};

struct RawTables {
    std::vector<RawInteraction> interactions;
    std::vector<Demographics> demographics;

    bool operator==(const RawTables&) const = default;
};

/// Parses an ISO-8601 date or date-time (UTC, `YYYY-MM-DD[Thh:mm[:ss]]`) or an
/// integer count of epoch seconds.
std::optional<std::int64_t> parse_timestamp(std::string_view text);

/// `patient_id,disease_code,admit_time`. Duplicate (patient, disease) rows collapse to
/// the earliest admission; first-seen row order is kept otherwise.
std::vector<RawInteraction> read_interactions(std::istream& in);
/// `patient_id,age,gender,race` with gender M/F and race race_00..race_32.
std::vector<Demographics> read_demographics(std::istream& in);

RawTables ingest(const std::filesystem::path& interactions,
                 const std::filesystem::path& demographics);

void write_interactions(std::ostream& out, std::span<const RawInteraction> rows);
void write_demographics(std::ostream& out, std::span<const Demographics> rows);

/// Keeps interactions of the `max_diseases` diseases with the most distinct patients
/// (ties by code) and drops patients left without interactions.
RawTables filter_top_diseases(RawTables raw, std::size_t max_diseases);

/// Index of the one-hot age bucket: [18,20], [21,30], ..., [81,89], [91].
std::size_t age_bucket(int age);

/// One row per entry, kFeatureWidth columns: age one-hot, gender bit, race one-hot.
Matrix encode_features(std::span<const Demographics> demographics);

struct Dataset {
    std::vector<std::string> patient_ids;   ///< index → id
    std::vector<std::string> disease_codes; ///< index → code
    InteractionMatrix train;
    InteractionMatrix test;
    Matrix features;  ///< P × kFeatureWidth

    std::size_t num_patients() const noexcept { return patient_ids.size(); }
    std::size_t num_diseases() const noexcept { return disease_codes.size(); }
    std::optional<std::size_t> patient_index(std::string_view id) const;
    /// train ∪ test
    InteractionMatrix full() const;
};

/// Per patient: sort by (admit_time, code) and put the first ⌈ratio·n⌉ rows in train.
/// Patients and diseases are indexed in first-seen order of the interaction table.
Dataset temporal_split(const RawTables& raw, double ratio);

struct SynthConfig {
    std::size_t patients = 200;
    std::size_t diseases = 100;
    std::size_t rank = 8;
    double density = 0.05;
    std::uint64_t seed = 1;
    bool confound = false;

    void validate() const;
};

struct SyntheticData {
    RawTables tables;
    Matrix patient_factors;  ///< U, P × r
    Matrix disease_factors;  ///< V, D × r
    Matrix preferences;      ///< U Vᵀ
};

/// Planted low-rank generator. Each patient receives the diseases with the largest
/// u_pᵀv_d; the count is density·D rounded stochastically (at least one).
SyntheticData synth_generate(const SynthConfig& config);

/// Writes interactions.csv, demographics.csv, truth.csv and manifest.json into `dir`.
std::vector<std::filesystem::path> write_synthetic(const std::filesystem::path& dir,
                                                   const SyntheticData& data,
                                                   const SynthConfig& config);

}  // namespace cldd
