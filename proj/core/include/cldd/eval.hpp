#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cldd/data.hpp"
#include "cldd/model.hpp"

namespace cldd {

inline constexpr std::size_t kDefaultCutoff = 20;

struct TopKMetrics {
    double recall = 0.0;
    double precision = 0.0;
    double ndcg = 0.0;
    double hit = 0.0;
};

struct PatientMetrics {
    std::size_t patient = 0;
    TopKMetrics top_k;
    double auc = 0.0;
};

struct MetricReport {
    std::size_t cutoff = kDefaultCutoff;
    std::vector<PatientMetrics> patients;  ///< ascending patient index
    TopKMetrics mean;
    double mean_auc = 0.0;

    std::size_t evaluated() const noexcept { return patients.size(); }
};

/// Indices of the `k` largest non-excluded scores, ties by ascending index. Returns
/// fewer than `k` when fewer candidates exist.
std::vector<std::uint32_t> rank(std::span<const double> scores, std::size_t k);

/// Requires a non-empty `test_positives` (sorted or not).
TopKMetrics metrics_at_k(std::span<const std::uint32_t> top_k,
                         std::span<const std::uint32_t> test_positives, std::size_t k);

/// Fraction of (positive, negative) pairs ordered correctly, ties counting 0.5.
/// Negatives are diseases outside test ∪ train positives. Returns nullopt when there
/// are no positives or no negatives.
std::optional<double> auc(std::span<const double> scores,
                          std::span<const std::uint32_t> test_positives,
                          std::span<const std::uint32_t> train_positives);

/// Fills `out` (length D) with the scores of one patient.
using Scorer = std::function<void(std::size_t patient, std::span<double> out)>;

/// Macro-averaged metrics over patients with at least one test positive. Training
/// positives are excluded from the candidate set before ranking.
MetricReport evaluate_scorer(const Dataset& dataset, std::size_t k, const Scorer& scorer);
MetricReport evaluate_embeddings(const FinalEmbeddings& z, const Dataset& dataset, std::size_t k);
MetricReport evaluate(const ModelState& state, const Dataset& dataset, std::size_t k);

struct CaseRow {
    std::size_t rank = 0;  ///< 1-based
    std::uint32_t disease = 0;
    std::string code;
    double score = 0.0;
    bool hit = false;
};

/// Top-k diseases for one patient annotated with whether each is a masked test positive.
/// Throws DataError for an unknown id. With k above the candidate count the full ranking
/// is returned.
std::vector<CaseRow> case_report(const FinalEmbeddings& z, const Dataset& dataset,
                                 const std::string& patient_id, std::size_t k);

/// `patient_id,recall,precision,ndcg,hit,auc` rows followed by a `# mean ...` footer.
void write_report_csv(std::ostream& out, const MetricReport& report, const Dataset& dataset);

void write_case_report_csv(std::ostream& out, const std::string& patient_id,
                           std::span<const CaseRow> rows);

}  // namespace cldd
