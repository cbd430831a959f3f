#include "cldd/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cldd/errors.hpp"

namespace cldd {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

template <class Int>
std::optional<Int> parse_int(std::string_view s) {
    Int v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

// Reads header + rows; returns rows with their 1-based line numbers.
std::vector<std::pair<std::size_t, std::vector<std::string>>> read_table(
    std::istream& in, std::string_view expected_header) {
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view view = trim(line);
        if (view.empty()) continue;
        if (!header_seen) {
            if (view != expected_header) {
                throw DataError("expected header '" + std::string(expected_header) + "', got '" +
                                    std::string(view) + "'",
                                line_no);
            }
            header_seen = true;
            continue;
        }
        std::vector<std::string> fields;
        for (auto f : split_fields(view)) fields.emplace_back(f);
        rows.emplace_back(line_no, std::move(fields));
    }
    if (!header_seen) throw DataError("missing header '" + std::string(expected_header) + "'");
    return rows;
}

std::string race_token(int race) { return fmt::format("race_{:02d}", race); }

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::size_t digits(std::size_t n) {
    std::size_t d = 1;
    while (n >= 10) {
        n /= 10;
        ++d;
    }
    return d;
}

}  // namespace

std::optional<std::int64_t> parse_timestamp(std::string_view text) {
    text = trim(text);
    if (text.empty()) return std::nullopt;
    if (auto v = parse_int<std::int64_t>(text)) return v;

    // YYYY-MM-DD[(T| )hh:mm[:ss]][Z]
    if (text.size() < 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
    auto y = parse_int<int>(text.substr(0, 4));
    auto mo = parse_int<unsigned>(text.substr(5, 2));
    auto d = parse_int<unsigned>(text.substr(8, 2));
    if (!y || !mo || !d) return std::nullopt;
    const std::chrono::year_month_day ymd{std::chrono::year{*y}, std::chrono::month{*mo},
                                          std::chrono::day{*d}};
    if (!ymd.ok()) return std::nullopt;
    std::int64_t seconds =
        static_cast<std::int64_t>(std::chrono::sys_days{ymd}.time_since_epoch().count()) * 86400;

    std::string_view rest = text.substr(10);
    if (!rest.empty() && rest.back() == 'Z') rest.remove_suffix(1);
    if (rest.empty()) return seconds;
    if (rest.front() != 'T' && rest.front() != ' ') return std::nullopt;
    rest.remove_prefix(1);
    if (rest.size() != 5 && rest.size() != 8) return std::nullopt;
    if (rest[2] != ':' || (rest.size() == 8 && rest[5] != ':')) return std::nullopt;
    auto hh = parse_int<int>(rest.substr(0, 2));
    auto mm = parse_int<int>(rest.substr(3, 2));
    std::optional<int> ss = 0;
    if (rest.size() == 8) ss = parse_int<int>(rest.substr(6, 2));
    if (!hh || !mm || !ss || *hh > 23 || *mm > 59 || *ss > 60) return std::nullopt;
    return seconds + *hh * 3600 + *mm * 60 + *ss;
}

std::vector<RawInteraction> read_interactions(std::istream& in) {
    auto rows = read_table(in, "patient_id,disease_code,admit_time");
    std::vector<RawInteraction> out;
    std::map<std::pair<std::string, std::string>, std::size_t> seen;
    for (auto& [line, fields] : rows) {
        if (fields.size() != 3) throw DataError("expected 3 fields", line);
        if (fields[0].empty()) throw DataError("empty patient_id", line);
        if (fields[1].empty()) throw DataError("empty disease_code", line);
        auto t = parse_timestamp(fields[2]);
        if (!t) throw DataError("unparseable admit_time '" + fields[2] + "'", line);
        auto key = std::make_pair(fields[0], fields[1]);
        if (auto it = seen.find(key); it != seen.end()) {
            auto& kept = out[it->second];
            kept.admit_time = std::min(kept.admit_time, *t);
            continue;
        }
        seen.emplace(key, out.size());
        out.push_back({std::move(fields[0]), std::move(fields[1]), *t});
    }
    if (out.empty()) throw DataError("no interactions");
    return out;
}

std::vector<Demographics> read_demographics(std::istream& in) {
    auto rows = read_table(in, "patient_id,age,gender,race");
    std::vector<Demographics> out;
    std::unordered_set<std::string> ids;
    for (auto& [line, fields] : rows) {
        if (fields.size() != 4) throw DataError("expected 4 fields", line);
        Demographics d;
        d.patient_id = fields[0];
        if (d.patient_id.empty()) throw DataError("empty patient_id", line);
        if (!ids.insert(d.patient_id).second)
            throw DataError("duplicate demographics for '" + d.patient_id + "'", line);
        auto age = parse_int<int>(fields[1]);
        if (!age) throw DataError("unparseable age '" + fields[1] + "'", line);
        if (*age < 18) throw DataError("age below the adult cohort minimum of 18", line);
        d.age = *age > 89 ? 91 : *age;
        if (fields[2] == "M") {
            d.gender = Gender::Male;
        } else if (fields[2] == "F") {
            d.gender = Gender::Female;
        } else {
            throw DataError("unknown gender token '" + fields[2] + "' (allowed: M, F)", line);
        }
        const std::string& r = fields[3];
        std::optional<int> race;
        if (r.size() == 7 && r.rfind("race_", 0) == 0) race = parse_int<int>(r.substr(5));
        if (!race || *race < 0 || *race >= static_cast<int>(kRaceCategories)) {
            throw DataError("unknown race token '" + r + "' (allowed: race_00..race_32)", line);
        }
        d.race = *race;
        out.push_back(std::move(d));
    }
    return out;
}

RawTables ingest(const std::filesystem::path& interactions,
                 const std::filesystem::path& demographics) {
    std::ifstream fi(interactions);
    if (!fi) throw DataError("cannot open interactions file " + interactions.string());
    std::ifstream fd(demographics);
    if (!fd) throw DataError("cannot open demographics file " + demographics.string());
    RawTables raw;
    try {
        raw.interactions = read_interactions(fi);
    } catch (const DataError& e) {
        throw DataError(interactions.string() + ": " + e.what());
    }
    try {
        raw.demographics = read_demographics(fd);
    } catch (const DataError& e) {
        throw DataError(demographics.string() + ": " + e.what());
    }
    return raw;
}

void write_interactions(std::ostream& out, std::span<const RawInteraction> rows) {
    out << "patient_id,disease_code,admit_time\n";
    for (const auto& r : rows) out << r.patient_id << ',' << r.disease_code << ',' << r.admit_time << '\n';
}

void write_demographics(std::ostream& out, std::span<const Demographics> rows) {
    out << "patient_id,age,gender,race\n";
    for (const auto& d : rows) {
        out << d.patient_id << ',' << d.age << ',' << (d.gender == Gender::Male ? 'M' : 'F') << ','
            << race_token(d.race) << '\n';
    }
}

RawTables filter_top_diseases(RawTables raw, std::size_t max_diseases) {
    if (max_diseases == 0) throw ConfigError("max_diseases must be >= 1");
    // Interactions are deduplicated per (patient, disease), so row counts are patient counts.
    std::map<std::string, std::size_t> frequency;
    for (const auto& r : raw.interactions) ++frequency[r.disease_code];
    if (frequency.size() <= max_diseases) return raw;

    std::vector<std::pair<std::string, std::size_t>> ranked(frequency.begin(), frequency.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::unordered_set<std::string> keep;
    for (std::size_t i = 0; i < max_diseases; ++i) keep.insert(ranked[i].first);

    std::erase_if(raw.interactions,
                  [&](const RawInteraction& r) { return !keep.contains(r.disease_code); });
    std::unordered_set<std::string> patients;
    for (const auto& r : raw.interactions) patients.insert(r.patient_id);
    std::erase_if(raw.demographics,
                  [&](const Demographics& d) { return !patients.contains(d.patient_id); });
    return raw;
}

std::size_t age_bucket(int age) {
    if (age < 18) throw DataError("age " + std::to_string(age) + " is below 18");
    if (age == 90)
        throw DataError("age 90 falls between the [81, 89] and [91] buckets");
    if (age <= 20) return 0;
    if (age <= 89) return static_cast<std::size_t>((age - 11) / 10);
    return kAgeBuckets - 1;
}

Matrix encode_features(std::span<const Demographics> demographics) {
    Matrix out(demographics.size(), kFeatureWidth);
    for (std::size_t i = 0; i < demographics.size(); ++i) {
        const auto& d = demographics[i];
        if (d.race < 0 || d.race >= static_cast<int>(kRaceCategories))
            throw DataError("race index out of range for '" + d.patient_id + "'");
        out(i, age_bucket(d.age)) = 1.0;
        out(i, kAgeBuckets) = d.gender == Gender::Female ? 1.0 : 0.0;
        out(i, kAgeBuckets + 1 + static_cast<std::size_t>(d.race)) = 1.0;
    }
    return out;
}

std::optional<std::size_t> Dataset::patient_index(std::string_view id) const {
    auto it = std::find(patient_ids.begin(), patient_ids.end(), id);
    if (it == patient_ids.end()) return std::nullopt;
    return static_cast<std::size_t>(it - patient_ids.begin());
}

InteractionMatrix Dataset::full() const {
    std::vector<Interaction> all(train.entries().begin(), train.entries().end());
    all.insert(all.end(), test.entries().begin(), test.entries().end());
    return {num_patients(), num_diseases(), std::move(all)};
}

Dataset temporal_split(const RawTables& raw, double ratio) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
    if (raw.interactions.empty()) throw DataError("no interactions");

    Dataset ds;
    std::unordered_map<std::string, std::uint32_t> patient_of;
    std::unordered_map<std::string, std::uint32_t> disease_of;
    std::vector<std::vector<const RawInteraction*>> per_patient;
    for (const auto& r : raw.interactions) {
        auto [pit, pnew] = patient_of.try_emplace(r.patient_id,
                                                  static_cast<std::uint32_t>(ds.patient_ids.size()));
        if (pnew) {
            ds.patient_ids.push_back(r.patient_id);
            per_patient.emplace_back();
        }
        auto [dit, dnew] = disease_of.try_emplace(r.disease_code,
                                                  static_cast<std::uint32_t>(ds.disease_codes.size()));
        if (dnew) ds.disease_codes.push_back(r.disease_code);
        per_patient[pit->second].push_back(&r);
    }

    std::vector<Interaction> train;
    std::vector<Interaction> test;
    for (std::uint32_t p = 0; p < per_patient.size(); ++p) {
        auto& rows = per_patient[p];
        std::sort(rows.begin(), rows.end(), [](const RawInteraction* a, const RawInteraction* b) {
            return a->admit_time != b->admit_time ? a->admit_time < b->admit_time
                                                  : a->disease_code < b->disease_code;
        });
        const auto n = rows.size();
        const auto n_train = std::min<std::size_t>(
            n, static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9)));
        for (std::size_t i = 0; i < n; ++i) {
            Interaction e{p, disease_of.at(rows[i]->disease_code), rows[i]->admit_time};
            (i < n_train ? train : test).push_back(e);
        }
    }
    ds.train = InteractionMatrix(ds.patient_ids.size(), ds.disease_codes.size(), std::move(train));
    ds.test = InteractionMatrix(ds.patient_ids.size(), ds.disease_codes.size(), std::move(test));

    std::unordered_map<std::string, const Demographics*> demo;
    for (const auto& d : raw.demographics) demo.emplace(d.patient_id, &d);
    std::vector<Demographics> ordered;
    ordered.reserve(ds.patient_ids.size());
    for (const auto& id : ds.patient_ids) {
        auto it = demo.find(id);
        if (it == demo.end()) throw DataError("no demographics for patient '" + id + "'");
        ordered.push_back(*it->second);
    }
    ds.features = encode_features(ordered);
    return ds;
}

void SynthConfig::validate() const {
    if (patients == 0 || diseases == 0) throw ConfigError("patients and diseases must be >= 1");
    if (rank == 0 || rank > std::min(patients, diseases))
        throw ConfigError("rank must lie in [1, min(patients, diseases)]");
    if (!(density > 0.0 && density < 0.5)) throw ConfigError("density must lie in (0, 0.5)");
}

SyntheticData synth_generate(const SynthConfig& config) {
    config.validate();
    const std::size_t num_p = config.patients;
    const std::size_t num_d = config.diseases;
    const std::size_t r = config.rank;

    SyntheticData out;
    out.patient_factors = Matrix(num_p, r);
    out.disease_factors = Matrix(num_d, r);

    std::normal_distribution<double> normal(0.0, 1.0);
    std::mt19937_64 disease_rng(stream_seed(config.seed, 0, 0));
    for (double& v : out.disease_factors.values()) v = normal(disease_rng);

    // Shared latent offset per age bucket; only applied with --confound.
    Matrix bucket_offset(kAgeBuckets, r);
    std::mt19937_64 offset_rng(stream_seed(config.seed, 1, 0));
    for (double& v : bucket_offset.values()) v = normal(offset_rng);

    const std::size_t id_width = digits(num_p);
    const std::size_t code_width = digits(num_d);
    std::vector<std::string> codes(num_d);
    for (std::size_t d = 0; d < num_d; ++d) codes[d] = fmt::format("D{:0{}}", d, code_width);

    const double expected = config.density * static_cast<double>(num_d);
    std::vector<std::size_t> order(num_d);
    for (std::size_t p = 0; p < num_p; ++p) {
        std::mt19937_64 rng(stream_seed(config.seed, 2, p));
        const std::string id = fmt::format("P{:0{}}", p, id_width);

        Demographics demo;
        demo.patient_id = id;
        const int raw_age = std::uniform_int_distribution<int>(18, 95)(rng);
        demo.age = raw_age > 89 ? 91 : raw_age;
        demo.gender = std::bernoulli_distribution(0.5)(rng) ? Gender::Female : Gender::Male;
        demo.race = std::uniform_int_distribution<int>(0, kRaceCategories - 1)(rng);
        out.tables.demographics.push_back(demo);

        auto u = out.patient_factors.row(p);
        for (double& v : u) v = normal(rng);
        if (config.confound) {
            auto off = bucket_offset.row(age_bucket(demo.age));
            for (std::size_t j = 0; j < r; ++j) u[j] += off[j];
        }

        std::vector<double> pref(num_d);
        for (std::size_t d = 0; d < num_d; ++d) pref[d] = dot(u, out.disease_factors.row(d));

        const double whole = std::floor(expected);
        std::size_t count = static_cast<std::size_t>(whole);
        if (std::bernoulli_distribution(expected - whole)(rng)) ++count;
        count = std::clamp<std::size_t>(count, 1, num_d);

        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count),
                          order.end(), [&](std::size_t a, std::size_t b) {
                              return pref[a] != pref[b] ? pref[a] > pref[b] : a < b;
                          });
        std::vector<std::size_t> chosen(order.begin(),
                                        order.begin() + static_cast<std::ptrdiff_t>(count));
        std::shuffle(chosen.begin(), chosen.end(), rng);

        std::int64_t t = 1'500'000'000 + std::uniform_int_distribution<std::int64_t>(0, 86400 * 365)(rng);
        for (std::size_t d : chosen) {
            t += std::uniform_int_distribution<std::int64_t>(86400, 86400 * 30)(rng);
            out.tables.interactions.push_back({id, codes[d], t});
        }
    }
    out.preferences = matmul_nt(out.patient_factors, out.disease_factors);
    return out;
}

std::vector<std::filesystem::path> write_synthetic(const std::filesystem::path& dir,
                                                   const SyntheticData& data,
                                                   const SynthConfig& config) {
    std::filesystem::create_directories(dir);
    const auto interactions = dir / "interactions.csv";
    const auto demographics = dir / "demographics.csv";
    const auto truth = dir / "truth.csv";
    const auto manifest = dir / "manifest.json";
    {
        std::ofstream out(interactions);
        write_interactions(out, data.tables.interactions);
    }
    {
        std::ofstream out(demographics);
        write_demographics(out, data.tables.demographics);
    }
    {
        std::ofstream out(truth);
        out << "kind,index";
        for (std::size_t j = 0; j < config.rank; ++j) out << ",f" << j;
        out << '\n';
        auto dump = [&](const char* kind, const Matrix& m) {
            for (std::size_t i = 0; i < m.rows(); ++i) {
                out << kind << ',' << i;
                for (double v : m.row(i)) out << ',' << format_double(v);
                out << '\n';
            }
        };
        dump("U", data.patient_factors);
        dump("V", data.disease_factors);
    }
    nlohmann::ordered_json j;
    j["format_version"] = 1;
    j["generator"] = {{"patients", config.patients},
                      {"diseases", config.diseases},
                      {"rank", config.rank},
                      {"density", config.density},
                      {"seed", config.seed},
                      {"confound", config.confound}};
    j["counts"] = {{"patients", data.tables.demographics.size()},
                   {"diseases", config.diseases},
                   {"interactions", data.tables.interactions.size()}};
    j["files"] = {"interactions.csv", "demographics.csv", "truth.csv"};
    std::ofstream(manifest) << j.dump(2) << '\n';
    return {interactions, demographics, truth, manifest};
}

}  // namespace cldd
