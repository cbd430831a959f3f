#include "cldd/graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <thread>

#include "cldd/errors.hpp"

namespace cldd {

namespace {

std::atomic<unsigned> g_threads{1};

void build_index(std::size_t n, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs,
                 std::vector<std::size_t>& offsets, std::vector<std::uint32_t>& targets) {
    offsets.assign(n + 1, 0);
    for (const auto& [src, dst] : pairs) ++offsets[src + 1];
    for (std::size_t i = 0; i < n; ++i) offsets[i + 1] += offsets[i];
    targets.assign(pairs.size(), 0);
    std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
    for (const auto& [src, dst] : pairs) targets[cursor[src]++] = dst;
    for (std::size_t i = 0; i < n; ++i) {
        std::sort(targets.begin() + static_cast<std::ptrdiff_t>(offsets[i]),
                  targets.begin() + static_cast<std::ptrdiff_t>(offsets[i + 1]));
    }
}

}  // namespace

InteractionMatrix::InteractionMatrix(std::size_t num_patients, std::size_t num_diseases,
                                     std::vector<Interaction> entries)
    : num_patients_(num_patients), num_diseases_(num_diseases), entries_(std::move(entries)) {
    for (const auto& e : entries_) {
        if (e.patient >= num_patients_ || e.disease >= num_diseases_) {
            throw StructuralError("interaction (" + std::to_string(e.patient) + ", " +
                                  std::to_string(e.disease) + ") out of range");
        }
    }
    std::sort(entries_.begin(), entries_.end(), [](const Interaction& a, const Interaction& b) {
        return a.patient != b.patient ? a.patient < b.patient : a.disease < b.disease;
    });
    for (std::size_t i = 1; i < entries_.size(); ++i) {
        if (entries_[i].patient == entries_[i - 1].patient &&
            entries_[i].disease == entries_[i - 1].disease) {
            throw StructuralError("duplicate interaction (" + std::to_string(entries_[i].patient) +
                                  ", " + std::to_string(entries_[i].disease) + ")");
        }
    }

    std::vector<std::pair<std::uint32_t, std::uint32_t>> pd;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> dp;
    pd.reserve(entries_.size());
    dp.reserve(entries_.size());
    for (const auto& e : entries_) {
        pd.emplace_back(e.patient, e.disease);
        dp.emplace_back(e.disease, e.patient);
    }
    build_index(num_patients_, pd, patient_offsets_, patient_diseases_);
    build_index(num_diseases_, dp, disease_offsets_, disease_patients_);
}

bool InteractionMatrix::contains(std::size_t patient, std::size_t disease) const {
    if (patient >= num_patients_) return false;
    auto ds = diseases_of(patient);
    return std::binary_search(ds.begin(), ds.end(), static_cast<std::uint32_t>(disease));
}

std::span<const std::uint32_t> InteractionMatrix::diseases_of(std::size_t patient) const {
    if (patient >= num_patients_) throw StructuralError("patient index out of range");
    return {patient_diseases_.data() + patient_offsets_[patient],
            patient_offsets_[patient + 1] - patient_offsets_[patient]};
}

std::span<const std::uint32_t> InteractionMatrix::patients_of(std::size_t disease) const {
    if (disease >= num_diseases_) throw StructuralError("disease index out of range");
    return {disease_patients_.data() + disease_offsets_[disease],
            disease_offsets_[disease + 1] - disease_offsets_[disease]};
}

SparseMatrix::SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> offsets,
                           std::vector<std::size_t> indices, std::vector<double> values)
    : rows_(rows),
      cols_(cols),
      offsets_(std::move(offsets)),
      indices_(std::move(indices)),
      values_(std::move(values)) {
    if (offsets_.size() != rows_ + 1 || offsets_.front() != 0 ||
        offsets_.back() != indices_.size() || indices_.size() != values_.size()) {
        throw StructuralError("CSR arrays are inconsistent");
    }
    for (std::size_t r = 0; r < rows_; ++r) {
        if (offsets_[r] > offsets_[r + 1]) throw StructuralError("CSR offsets not monotone");
        for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) {
            if (indices_[k] >= cols_) throw StructuralError("CSR column index out of range");
            if (k > offsets_[r] && indices_[k] <= indices_[k - 1])
                throw StructuralError("CSR column indices not strictly increasing");
        }
    }
}

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                         std::vector<Triplet> triplets) {
    std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    std::vector<std::size_t> offsets(rows + 1, 0);
    std::vector<std::size_t> indices;
    std::vector<double> values;
    indices.reserve(triplets.size());
    values.reserve(triplets.size());
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        const auto& t = triplets[i];
        if (t.row >= rows || t.col >= cols) throw StructuralError("triplet out of range");
        if (i > 0 && t.row == triplets[i - 1].row && t.col == triplets[i - 1].col) {
            values.back() += t.value;
            continue;
        }
        indices.push_back(t.col);
        values.push_back(t.value);
        ++offsets[t.row + 1];
    }
    for (std::size_t r = 0; r < rows; ++r) offsets[r + 1] += offsets[r];
    return {rows, cols, std::move(offsets), std::move(indices), std::move(values)};
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
    std::vector<std::size_t> offsets(n + 1);
    std::vector<std::size_t> indices(n);
    for (std::size_t i = 0; i <= n; ++i) offsets[i] = i;
    for (std::size_t i = 0; i < n; ++i) indices[i] = i;
    return {n, n, std::move(offsets), std::move(indices), std::vector<double>(n, 1.0)};
}

double SparseMatrix::at(std::size_t r, std::size_t c) const {
    auto idx = row_indices(r);
    auto it = std::lower_bound(idx.begin(), idx.end(), c);
    if (it == idx.end() || *it != c) return 0.0;
    return values_[offsets_[r] + static_cast<std::size_t>(it - idx.begin())];
}

Matrix SparseMatrix::to_dense() const {
    Matrix out(rows_, cols_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) out(r, indices_[k]) = values_[k];
    }
    return out;
}

bool SparseMatrix::is_symmetric() const {
    if (rows_ != cols_) return false;
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) {
            const std::size_t c = indices_[k];
            auto idx = row_indices(c);
            auto it = std::lower_bound(idx.begin(), idx.end(), r);
            if (it == idx.end() || *it != r) return false;
            if (values_[offsets_[c] + static_cast<std::size_t>(it - idx.begin())] != values_[k])
                return false;
        }
    }
    return true;
}

SparseMatrix build_adjacency(const InteractionMatrix& y) {
    const std::size_t p = y.num_patients();
    const std::size_t n = p + y.num_diseases();
    std::vector<Triplet> triplets;
    triplets.reserve(2 * y.nnz());
    for (const auto& e : y.entries()) {
        triplets.push_back({e.patient, p + e.disease, 1.0});
        triplets.push_back({p + e.disease, e.patient, 1.0});
    }
    return SparseMatrix::from_triplets(n, n, std::move(triplets));
}

NormalizedLaplacian normalize(const SparseMatrix& adjacency, std::size_t num_patients) {
    if (adjacency.rows() != adjacency.cols())
        throw StructuralError("normalize: adjacency is not square");
    if (!adjacency.is_symmetric()) throw StructuralError("normalize: adjacency is not symmetric");
    if (num_patients > adjacency.rows())
        throw StructuralError("normalize: patient count exceeds node count");

    const std::size_t n = adjacency.rows();
    // Ã = A + I; deg_i = row sum of Ã.
    std::vector<Triplet> triplets;
    triplets.reserve(adjacency.nnz() + n);
    for (std::size_t r = 0; r < n; ++r) {
        auto idx = adjacency.row_indices(r);
        auto val = adjacency.row_values(r);
        for (std::size_t k = 0; k < idx.size(); ++k) triplets.push_back({r, idx[k], val[k]});
        triplets.push_back({r, r, 1.0});
    }
    SparseMatrix tilde = SparseMatrix::from_triplets(n, n, std::move(triplets));

    std::vector<double> inv_sqrt_deg(n);
    for (std::size_t r = 0; r < n; ++r) {
        double deg = 0.0;
        for (double v : tilde.row_values(r)) deg += v;
        inv_sqrt_deg[r] = 1.0 / std::sqrt(deg);
    }

    std::vector<std::size_t> offsets(tilde.offsets().begin(), tilde.offsets().end());
    std::vector<std::size_t> indices(tilde.indices().begin(), tilde.indices().end());
    std::vector<double> values(tilde.nnz());
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) {
            const std::size_t c = indices[k];
            // Same operand order for (r, c) and (c, r) keeps the result exactly symmetric.
            const double scale = r < c ? inv_sqrt_deg[r] * inv_sqrt_deg[c]
                                       : inv_sqrt_deg[c] * inv_sqrt_deg[r];
            values[k] = tilde.values()[k] * scale;
        }
    }
    return {SparseMatrix(n, n, std::move(offsets), std::move(indices), std::move(values)),
            num_patients, n - num_patients};
}

SparseMatrix edge_weight_operator(const InteractionMatrix& y) {
    const std::size_t p = y.num_patients();
    const std::size_t n = p + y.num_diseases();
    std::vector<Triplet> triplets;
    triplets.reserve(2 * y.nnz());
    for (const auto& e : y.entries()) {
        const double w = edge_decay(e.patient, e.disease, y);
        triplets.push_back({e.patient, p + e.disease, w});
        triplets.push_back({p + e.disease, e.patient, w});
    }
    return SparseMatrix::from_triplets(n, n, std::move(triplets));
}

double edge_decay(std::size_t patient, std::size_t disease, const InteractionMatrix& y) {
    if (!y.contains(patient, disease)) {
        throw DomainError("edge_decay: (" + std::to_string(patient) + ", " +
                          std::to_string(disease) + ") is not an edge");
    }
    const double np = static_cast<double>(y.patient_degree(patient));
    const double nd = static_cast<double>(y.disease_degree(disease));
    return 1.0 / std::sqrt(np * nd);
}

namespace {

void spmm_rows(const SparseMatrix& m, const Matrix& x, Matrix& out, std::size_t begin,
               std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
        auto dst = out.row(r);
        auto idx = m.row_indices(r);
        auto val = m.row_values(r);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const double v = val[k];
            auto src = x.row(idx[k]);
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += v * src[j];
        }
    }
}

}  // namespace

Matrix spmm(const SparseMatrix& m, const Matrix& x) { return spmm(m, x, num_threads()); }

Matrix spmm(const SparseMatrix& m, const Matrix& x, unsigned threads) {
    if (m.cols() != x.rows()) throw StructuralError("spmm: dimension mismatch");
    Matrix out(m.rows(), x.cols());
    const std::size_t rows = m.rows();
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, rows));
    // Small products are not worth a thread launch.
    if (workers == 1 || m.nnz() * x.cols() < 1u << 16) {
        spmm_rows(m, x, out, 0, rows);
        return out;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (rows + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(rows, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&, begin, end] { spmm_rows(m, x, out, begin, end); });
    }
    for (auto& t : pool) t.join();
    return out;
}

void set_num_threads(unsigned threads) { g_threads = std::max(1u, threads); }

unsigned num_threads() { return g_threads; }

}  // namespace cldd
