#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cldd/dense.hpp"

namespace cldd {

struct Interaction {
    std::uint32_t patient = 0;
    std::uint32_t disease = 0;
    std::int64_t timestamp = 0;

    bool operator==(const Interaction&) const = default;
};

/// Binary patient × disease matrix Y stored as an edge list.
///
/// Entries are kept sorted by (patient, disease); construction rejects
/// out-of-range indices and duplicate pairs.
class InteractionMatrix {
public:
    InteractionMatrix() = default;
    InteractionMatrix(std::size_t num_patients, std::size_t num_diseases,
                      std::vector<Interaction> entries);

    std::size_t num_patients() const noexcept { return num_patients_; }
    std::size_t num_diseases() const noexcept { return num_diseases_; }
    std::size_t nnz() const noexcept { return entries_.size(); }
    std::span<const Interaction> entries() const noexcept { return entries_; }

    bool contains(std::size_t patient, std::size_t disease) const;

    /// Diseases of each patient, ascending.
    std::span<const std::uint32_t> diseases_of(std::size_t patient) const;
    /// Patients of each disease, ascending.
    std::span<const std::uint32_t> patients_of(std::size_t disease) const;

    std::size_t patient_degree(std::size_t p) const { return diseases_of(p).size(); }
    std::size_t disease_degree(std::size_t d) const { return patients_of(d).size(); }

    bool operator==(const InteractionMatrix& other) const {
        return num_patients_ == other.num_patients_ && num_diseases_ == other.num_diseases_ &&
               entries_ == other.entries_;
    }

private:
    std::size_t num_patients_ = 0;
    std::size_t num_diseases_ = 0;
    std::vector<Interaction> entries_;
    std::vector<std::size_t> patient_offsets_;
    std::vector<std::uint32_t> patient_diseases_;
    std::vector<std::size_t> disease_offsets_;
    std::vector<std::uint32_t> disease_patients_;
};

struct Triplet {
    std::size_t row = 0;
    std::size_t col = 0;
    double value = 0.0;
};

/// Compressed sparse row matrix. Column indices are strictly increasing within a row.
class SparseMatrix {
public:
    SparseMatrix() = default;
    SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> offsets,
                 std::vector<std::size_t> indices, std::vector<double> values);

    /// Builds from unordered triplets; repeated coordinates are summed.
    static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                      std::vector<Triplet> triplets);
    static SparseMatrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t nnz() const noexcept { return values_.size(); }

    std::span<const std::size_t> offsets() const noexcept { return offsets_; }
    std::span<const std::size_t> indices() const noexcept { return indices_; }
    std::span<const double> values() const noexcept { return values_; }

    std::span<const std::size_t> row_indices(std::size_t r) const {
        return {indices_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
    }
    std::span<const double> row_values(std::size_t r) const {
        return {values_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
    }

    /// Stored value at (r, c), or 0 when absent.
    double at(std::size_t r, std::size_t c) const;

    Matrix to_dense() const;

    bool is_symmetric() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::size_t> offsets_{0};
    std::vector<std::size_t> indices_;
    std::vector<double> values_;
};

/// D^{-1/2}(A + I)D^{-1/2} over nodes ordered patients first, then diseases.
struct NormalizedLaplacian {
    SparseMatrix matrix;
    std::size_t num_patients = 0;
    std::size_t num_diseases = 0;

    std::size_t num_nodes() const noexcept { return matrix.rows(); }
};

/// Block adjacency [[0, Y], [Yᵀ, 0]] of shape (P+D) × (P+D).
SparseMatrix build_adjacency(const InteractionMatrix& y);

/// Symmetric normalization with self-loops. Throws StructuralError for non-square or
/// asymmetric input.
NormalizedLaplacian normalize(const SparseMatrix& adjacency, std::size_t num_patients = 0);

/// Bipartite operator with entries w_pd = 1/sqrt(|N_p| |N_d|) and no self-loops.
SparseMatrix edge_weight_operator(const InteractionMatrix& y);

/// 1/sqrt(|N_p| |N_d|) for an existing edge. Throws DomainError otherwise.
double edge_decay(std::size_t patient, std::size_t disease, const InteractionMatrix& y);

/// Sparse × dense product. Rows may be split across worker threads; each row is
/// accumulated sequentially in ascending column order, so the result does not depend
/// on the worker count.
Matrix spmm(const SparseMatrix& m, const Matrix& x);
Matrix spmm(const SparseMatrix& m, const Matrix& x, unsigned threads);

/// Process-wide worker count used by spmm (default 1).
void set_num_threads(unsigned threads);
unsigned num_threads();

}  // namespace cldd
