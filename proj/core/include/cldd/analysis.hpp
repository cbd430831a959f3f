#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cldd/dense.hpp"
#include "cldd/graph.hpp"
#include "cldd/model.hpp"

namespace cldd {

/// Pairs where either disease has fewer patients are flagged as low support.
inline constexpr std::size_t kLowSupportThreshold = 5;

struct DiscrepancyRecord {
    std::uint32_t disease_a = 0;
    std::uint32_t disease_b = 0;
    std::string code_a;
    std::string code_b;
    double comorbidity = 0.0;  ///< max(rate(a,b), rate(b,a))
    double pearson = 0.0;
    double discrepancy = 0.0;  ///< |comorbidity − pearson|
    std::size_t support_a = 0;
    std::size_t support_b = 0;
    bool low_support = false;
};

/// |{patients with a and b}| / |{patients with a}|; nullopt when a has no patients.
std::optional<double> comorbidity_rate(const InteractionMatrix& y, std::size_t a, std::size_t b);

double discrepancy(double comorbidity, double pearson) noexcept;

struct PearsonResult {
    Matrix correlation;                  ///< D × D, symmetric
    std::vector<std::uint32_t> constant_rows;  ///< rows whose correlations were set to 0
};

/// Pearson correlation between embedding rows (over their m coordinates).
PearsonResult pearson_matrix(const Matrix& embeddings);

/// Rows P..P+D-1 of the final embedding table.
Matrix disease_rows(const FinalEmbeddings& z);

/// Scores every unordered disease pair and returns the `top_n` largest discrepancies,
/// ties by (code_a, code_b). Diseases without patients are skipped.
std::vector<DiscrepancyRecord> discrepancy_rank(const InteractionMatrix& y,
                                                const Matrix& disease_embeddings,
                                                std::span<const std::string> codes,
                                                std::size_t top_n);

void write_discrepancy_csv(std::ostream& out, std::span<const DiscrepancyRecord> records);

enum class NodeFilter { All, Patients, Diseases };

/// `id,kind,degree,dim_0..dim_{m-1}` with 17 significant digits. `degree` is the
/// number of diseases of a patient or of patients of a disease.
void export_embeddings(std::ostream& out, const FinalEmbeddings& z, const InteractionMatrix& y,
                       std::span<const std::string> patient_ids,
                       std::span<const std::string> disease_codes, NodeFilter filter);

struct ImportedEmbeddings {
    std::vector<std::string> ids;
    std::vector<std::string> kinds;
    std::vector<std::size_t> degrees;
    Matrix values;
};

ImportedEmbeddings import_embeddings(std::istream& in);

}  // namespace cldd
