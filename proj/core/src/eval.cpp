#include "cldd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include <fmt/format.h>

#include "cldd/errors.hpp"

namespace cldd {

namespace {

std::string fmt17(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

std::vector<std::uint32_t> rank(std::span<const double> scores, std::size_t k) {
    std::vector<std::uint32_t> candidates;
    candidates.reserve(scores.size());
    for (std::uint32_t d = 0; d < scores.size(); ++d)
        if (scores[d] != kExcludedScore) candidates.push_back(d);
    const std::size_t take = std::min(k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                      candidates.end(), [&](std::uint32_t a, std::uint32_t b) {
                          return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
                      });
    candidates.resize(take);
    return candidates;
}

TopKMetrics metrics_at_k(std::span<const std::uint32_t> top_k,
                         std::span<const std::uint32_t> test_positives, std::size_t k) {
    if (test_positives.empty()) throw DomainError("metrics_at_k: empty test positive set");
    if (k == 0) throw DomainError("metrics_at_k: cutoff must be >= 1");
    std::vector<std::uint32_t> positives(test_positives.begin(), test_positives.end());
    std::sort(positives.begin(), positives.end());

    std::size_t hits = 0;
    double dcg = 0.0;
    for (std::size_t i = 0; i < top_k.size() && i < k; ++i) {
        if (std::binary_search(positives.begin(), positives.end(), top_k[i])) {
            ++hits;
            dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
        }
    }
    double idcg = 0.0;
    const std::size_t ideal = std::min(positives.size(), k);
    for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);

    TopKMetrics m;
    m.recall = static_cast<double>(hits) / static_cast<double>(positives.size());
    m.precision = static_cast<double>(hits) / static_cast<double>(k);
    m.hit = hits > 0 ? 1.0 : 0.0;
    m.ndcg = dcg / idcg;
    return m;
}

std::optional<double> auc(std::span<const double> scores,
                          std::span<const std::uint32_t> test_positives,
                          std::span<const std::uint32_t> train_positives) {
    std::vector<char> role(scores.size(), 0);  // 0 negative, 1 positive, 2 ignored
    for (std::uint32_t d : train_positives) role.at(d) = 2;
    for (std::uint32_t d : test_positives) role.at(d) = 1;

    // Rank-sum over the pooled positives and negatives with mid-ranks for ties.
    std::vector<std::uint32_t> pool;
    std::size_t num_pos = 0;
    for (std::uint32_t d = 0; d < scores.size(); ++d) {
        if (role[d] == 2) continue;
        pool.push_back(d);
        if (role[d] == 1) ++num_pos;
    }
    const std::size_t num_neg = pool.size() - num_pos;
    if (num_pos == 0 || num_neg == 0) return std::nullopt;

    std::sort(pool.begin(), pool.end(),
              [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    for (std::size_t i = 0; i < pool.size();) {
        std::size_t j = i;
        while (j < pool.size() && scores[pool[j]] == scores[pool[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t)
            if (role[pool[t]] == 1) pos_rank_sum += mid_rank;
        i = j;
    }
    const double np = static_cast<double>(num_pos);
    const double nn = static_cast<double>(num_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

MetricReport evaluate_scorer(const Dataset& dataset, std::size_t k, const Scorer& scorer) {
    if (k == 0) throw ConfigError("cutoff K must be >= 1");
    MetricReport report;
    report.cutoff = k;
    std::vector<double> scores(dataset.num_diseases());
    std::size_t no_negatives = 0;
    for (std::size_t p = 0; p < dataset.num_patients(); ++p) {
        auto test_pos = dataset.test.diseases_of(p);
        if (test_pos.empty()) continue;
        auto train_pos = dataset.train.diseases_of(p);
        scorer(p, scores);
        const auto auc_value = auc(scores, test_pos, train_pos);
        if (!auc_value) {
            ++no_negatives;
            continue;
        }
        for (std::uint32_t d : train_pos) scores[d] = kExcludedScore;
        const auto top = rank(scores, k);
        report.patients.push_back({p, metrics_at_k(top, test_pos, k), *auc_value});
    }
    if (no_negatives > 0) {
        std::clog << "warning: " << no_negatives
                  << " patient(s) have no negative diseases and are excluded from evaluation\n";
    }
    const double n = static_cast<double>(report.patients.size());
    if (n > 0) {
        for (const auto& pm : report.patients) {
            report.mean.recall += pm.top_k.recall;
            report.mean.precision += pm.top_k.precision;
            report.mean.ndcg += pm.top_k.ndcg;
            report.mean.hit += pm.top_k.hit;
            report.mean_auc += pm.auc;
        }
        report.mean.recall /= n;
        report.mean.precision /= n;
        report.mean.ndcg /= n;
        report.mean.hit /= n;
        report.mean_auc /= n;
    }
    return report;
}

MetricReport evaluate_embeddings(const FinalEmbeddings& z, const Dataset& dataset, std::size_t k) {
    if (z.num_patients != dataset.num_patients() || z.num_diseases() != dataset.num_diseases())
        throw StructuralError("evaluate: embeddings do not match the dataset shape");
    return evaluate_scorer(dataset, k, [&](std::size_t p, std::span<double> out) {
        auto zp = z.patient(p);
        for (std::size_t d = 0; d < out.size(); ++d) out[d] = dot(zp, z.disease(d));
    });
}

MetricReport evaluate(const ModelState& state, const Dataset& dataset, std::size_t k) {
    const GraphOperators graph = GraphOperators::build(dataset.train);
    return evaluate_embeddings(embed(state, graph), dataset, k);
}

std::vector<CaseRow> case_report(const FinalEmbeddings& z, const Dataset& dataset,
                                 const std::string& patient_id, std::size_t k) {
    const auto p = dataset.patient_index(patient_id);
    if (!p) throw DataError("unknown patient id '" + patient_id + "'");
    const auto train_pos = dataset.train.diseases_of(*p);
    const auto test_pos = dataset.test.diseases_of(*p);
    const auto scores = score_all(z, *p, train_pos);
    const std::size_t candidates = dataset.num_diseases() - train_pos.size();
    if (k > candidates) {
        std::clog << "warning: K = " << k << " exceeds the " << candidates
                  << " candidate diseases; returning the full ranking\n";
    }
    std::vector<CaseRow> rows;
    const auto top = rank(scores, k);
    for (std::size_t i = 0; i < top.size(); ++i) {
        const std::uint32_t d = top[i];
        const bool hit = std::find(test_pos.begin(), test_pos.end(), d) != test_pos.end();
        rows.push_back({i + 1, d, dataset.disease_codes[d], scores[d], hit});
    }
    return rows;
}

void write_report_csv(std::ostream& out, const MetricReport& report, const Dataset& dataset) {
    out << "patient_id,recall,precision,ndcg,hit,auc\n";
    for (const auto& pm : report.patients) {
        out << dataset.patient_ids.at(pm.patient) << ',' << fmt17(pm.top_k.recall) << ','
            << fmt17(pm.top_k.precision) << ',' << fmt17(pm.top_k.ndcg) << ','
            << fmt17(pm.top_k.hit) << ',' << fmt17(pm.auc) << '\n';
    }
    out << fmt::format("# mean K={} patients={} recall={:.6f} precision={:.6f} ndcg={:.6f} "
                       "hit={:.6f} auc={:.6f}\n",
                       report.cutoff, report.evaluated(), report.mean.recall,
                       report.mean.precision, report.mean.ndcg, report.mean.hit,
                       report.mean_auc);
}

void write_case_report_csv(std::ostream& out, const std::string& patient_id,
                           std::span<const CaseRow> rows) {
    out << "patient_id,rank,disease_code,score,hit\n";
    for (const auto& r : rows) {
        out << patient_id << ',' << r.rank << ',' << r.code << ',' << fmt17(r.score) << ','
            << (r.hit ? 1 : 0) << '\n';
    }
}

}  // namespace cldd
