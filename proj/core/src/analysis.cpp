#include "cldd/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "cldd/errors.hpp"

namespace cldd {

std::optional<double> comorbidity_rate(const InteractionMatrix& y, std::size_t a, std::size_t b) {
    const auto pa = y.patients_of(a);
    if (pa.empty()) return std::nullopt;
    const auto pb = y.patients_of(b);
    std::size_t both = 0;
    auto ib = pb.begin();
    for (std::uint32_t p : pa) {
        while (ib != pb.end() && *ib < p) ++ib;
        if (ib != pb.end() && *ib == p) ++both;
    }
    return static_cast<double>(both) / static_cast<double>(pa.size());
}

double discrepancy(double comorbidity, double pearson) noexcept {
    return std::abs(comorbidity - pearson);
}

PearsonResult pearson_matrix(const Matrix& embeddings) {
    const std::size_t n = embeddings.rows();
    const std::size_t m = embeddings.cols();
    if (m < 2) throw StructuralError("pearson_matrix: need at least 2 embedding coordinates");

    // Center each row and scale to unit norm; correlations are then dot products.
    Matrix unit(n, m);
    PearsonResult result;
    std::vector<bool> constant(n, false);
    for (std::size_t r = 0; r < n; ++r) {
        auto src = embeddings.row(r);
        double mean = 0.0;
        for (double v : src) mean += v;
        mean /= static_cast<double>(m);
        auto dst = unit.row(r);
        double ss = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            dst[j] = src[j] - mean;
            ss += dst[j] * dst[j];
        }
        const double norm = std::sqrt(ss);
        if (!(norm > 0.0) || norm <= 1e-300) {
            constant[r] = true;
            result.constant_rows.push_back(static_cast<std::uint32_t>(r));
            std::fill(dst.begin(), dst.end(), 0.0);
            continue;
        }
        for (double& v : dst) v /= norm;
    }
    if (!result.constant_rows.empty()) {
        std::clog << "warning: " << result.constant_rows.size()
                  << " constant embedding row(s); their correlations are set to 0\n";
    }

    result.correlation = Matrix(n, n);
    for (std::size_t a = 0; a < n; ++a) {
        result.correlation(a, a) = constant[a] ? 0.0 : 1.0;
        for (std::size_t b = a + 1; b < n; ++b) {
            const double r = std::clamp(dot(unit.row(a), unit.row(b)), -1.0, 1.0);
            result.correlation(a, b) = r;
            result.correlation(b, a) = r;
        }
    }
    return result;
}

Matrix disease_rows(const FinalEmbeddings& z) {
    Matrix out(z.num_diseases(), z.table.cols());
    for (std::size_t d = 0; d < out.rows(); ++d) {
        auto src = z.disease(d);
        std::copy(src.begin(), src.end(), out.row(d).begin());
    }
    return out;
}

std::vector<DiscrepancyRecord> discrepancy_rank(const InteractionMatrix& y,
                                                const Matrix& disease_embeddings,
                                                std::span<const std::string> codes,
                                                std::size_t top_n) {
    const std::size_t num_d = y.num_diseases();
    if (disease_embeddings.rows() != num_d || codes.size() != num_d)
        throw StructuralError("discrepancy_rank: disease counts disagree");
    const PearsonResult pearson = pearson_matrix(disease_embeddings);

    // Co-occurrence counts from each patient's disease list.
    Matrix both(num_d, num_d);
    for (std::size_t p = 0; p < y.num_patients(); ++p) {
        auto ds = y.diseases_of(p);
        for (std::size_t i = 0; i < ds.size(); ++i)
            for (std::size_t j = i + 1; j < ds.size(); ++j) {
                both(ds[i], ds[j]) += 1.0;
                both(ds[j], ds[i]) += 1.0;
            }
    }

    std::vector<DiscrepancyRecord> records;
    for (std::uint32_t a = 0; a < num_d; ++a) {
        const std::size_t sa = y.disease_degree(a);
        if (sa == 0) continue;
        for (std::uint32_t b = a + 1; b < num_d; ++b) {
            const std::size_t sb = y.disease_degree(b);
            if (sb == 0) continue;
            DiscrepancyRecord rec;
            // Order each pair by code so ties resolve on (code_a, code_b).
            const bool swap = codes[b] < codes[a];
            rec.disease_a = swap ? b : a;
            rec.disease_b = swap ? a : b;
            rec.code_a = codes[rec.disease_a];
            rec.code_b = codes[rec.disease_b];
            rec.support_a = y.disease_degree(rec.disease_a);
            rec.support_b = y.disease_degree(rec.disease_b);
            const double co = both(a, b);
            rec.comorbidity = std::max(co / static_cast<double>(sa), co / static_cast<double>(sb));
            rec.pearson = pearson.correlation(a, b);
            rec.discrepancy = discrepancy(rec.comorbidity, rec.pearson);
            rec.low_support = rec.support_a < kLowSupportThreshold || rec.support_b < kLowSupportThreshold;
            records.push_back(std::move(rec));
        }
    }
    auto order = [](const DiscrepancyRecord& x, const DiscrepancyRecord& y2) {
        if (x.discrepancy != y2.discrepancy) return x.discrepancy > y2.discrepancy;
        if (x.code_a != y2.code_a) return x.code_a < y2.code_a;
        return x.code_b < y2.code_b;
    };
    const std::size_t take = std::min(top_n, records.size());
    std::partial_sort(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(take),
                      records.end(), order);
    records.resize(take);
    return records;
}

void write_discrepancy_csv(std::ostream& out, std::span<const DiscrepancyRecord> records) {
    out << "code_a,code_b,comorbidity,pearson,discrepancy,support_a,support_b\n";
    for (const auto& r : records) {
        out << fmt::format("{},{},{:.17g},{:.17g},{:.17g},{},{}\n", r.code_a, r.code_b,
                           r.comorbidity, r.pearson, r.discrepancy, r.support_a, r.support_b);
    }
}

void export_embeddings(std::ostream& out, const FinalEmbeddings& z, const InteractionMatrix& y,
                       std::span<const std::string> patient_ids,
                       std::span<const std::string> disease_codes, NodeFilter filter) {
    if (patient_ids.size() != z.num_patients || disease_codes.size() != z.num_diseases())
        throw StructuralError("export_embeddings: id lists do not match the embedding table");
    out << "id,kind,degree";
    for (std::size_t j = 0; j < z.table.cols(); ++j) out << ",dim_" << j;
    out << '\n';
    auto emit = [&](const std::string& id, const char* kind, std::size_t degree,
                    std::span<const double> row) {
        out << id << ',' << kind << ',' << degree;
        for (double v : row) out << ',' << fmt::format("{:.17g}", v);
        out << '\n';
    };
    if (filter != NodeFilter::Diseases) {
        for (std::size_t p = 0; p < z.num_patients; ++p)
            emit(patient_ids[p], "patient", y.patient_degree(p), z.patient(p));
    }
    if (filter != NodeFilter::Patients) {
        for (std::size_t d = 0; d < z.num_diseases(); ++d)
            emit(disease_codes[d], "disease", y.disease_degree(d), z.disease(d));
    }
}

ImportedEmbeddings import_embeddings(std::istream& in) {
    ImportedEmbeddings out;
    std::string line;
    if (!std::getline(in, line) || line.rfind("id,kind,degree", 0) != 0)
        throw DataError("embedding file: missing 'id,kind,degree,...' header", 1);
    const std::size_t width = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) - 2;
    std::vector<double> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != width + 3) throw DataError("embedding file: wrong field count", line_no);
        out.ids.push_back(fields[0]);
        out.kinds.push_back(fields[1]);
        std::size_t degree = 0;
        auto [p, ec] = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), degree);
        if (ec != std::errc{}) throw DataError("embedding file: bad degree", line_no);
        out.degrees.push_back(degree);
        for (std::size_t j = 0; j < width; ++j) {
            double v = 0.0;
            const auto& f = fields[3 + j];
            auto [q, ec2] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec2 != std::errc{} || q != f.data() + f.size())
                throw DataError("embedding file: bad value '" + f + "'", line_no);
            values.push_back(v);
        }
    }
    out.values = Matrix(out.ids.size(), width);
    std::copy(values.begin(), values.end(), out.values.values().begin());
    return out;
}

}  // namespace cldd
