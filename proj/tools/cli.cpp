#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "cldd/analysis.hpp"
#include "cldd/checkpoint.hpp"
#include "cldd/data.hpp"
#include "cldd/errors.hpp"
#include "cldd/eval.hpp"
#include "cldd/model.hpp"
#include "cldd/training.hpp"

namespace cldd::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

/// Bad flags, missing inputs, invalid values: exit code 1.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GlobalOptions {
    std::string config_path;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::string out_dir = ".";
};

struct DataOptions {
    std::string data_dir = ".";
    std::string interactions;
    std::string demographics;
    std::size_t max_diseases = 2000;
    double split = 0.8;

    json echo() const { return {{"max_diseases", max_diseases}, {"split", split}}; }
};

struct ModelOptions {
    std::size_t k = 64;
    std::size_t fixed = 43;
    std::size_t layers = 3;
    std::size_t hops = 3;
    std::size_t dim = 64;
    double dropout = 0.1;
    double leaky_slope = 0.2;

    ModelConfig to_config(std::uint64_t seed) const {
        ModelConfig c;
        c.embedding_dim = k;
        c.fixed_dim = fixed;
        c.num_layers = layers;
        c.max_hop = hops;
        c.layer_dims.assign(layers, dim);
        if (layers > 0) c.layer_dims[0] = k;
        c.dropout.assign(layers, dropout);
        c.leaky_slope = leaky_slope;
        c.seed = seed;
        return c;
    }
};

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

/// Flat `key = value` file. Values fill only options that were not given as flags.
void apply_config_file(const std::string& path, CLI::App& app, CLI::App* sub) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty() || line.front() == '[') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(fmt::format("{}:{}: expected key = value", path, line_no));
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        std::replace(key.begin(), key.end(), '_', '-');

        CLI::Option* opt = sub != nullptr ? sub->get_option_no_throw("--" + key) : nullptr;
        if (opt == nullptr) opt = app.get_option_no_throw("--" + key);
        if (opt == nullptr)
            throw UsageError(fmt::format("{}:{}: unknown key '{}'", path, line_no, key));
        if (key == "config") continue;
        if (opt->count() > 0) continue;
        opt->clear();
        opt->add_result(value);
        opt->run_callback();
    }
}

std::string config_line(const json& echo) { return "# config: " + echo.dump() + "\n"; }

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

Dataset load_dataset(const DataOptions& opts) {
    const fs::path interactions =
        opts.interactions.empty() ? fs::path(opts.data_dir) / "interactions.csv" : fs::path(opts.interactions);
    const fs::path demographics =
        opts.demographics.empty() ? fs::path(opts.data_dir) / "demographics.csv" : fs::path(opts.demographics);
    if (!fs::is_regular_file(interactions))
        throw UsageError("interactions file not found: " + interactions.string());
    if (!fs::is_regular_file(demographics))
        throw UsageError("demographics file not found: " + demographics.string());
    if (opts.max_diseases == 0) throw UsageError("--max-diseases must be >= 1");
    if (!(opts.split > 0.0 && opts.split < 1.0)) throw UsageError("--split must lie in (0, 1)");
    RawTables raw = ingest(interactions, demographics);
    raw = filter_top_diseases(std::move(raw), opts.max_diseases);
    return temporal_split(raw, opts.split);
}

/// Reads data preparation settings recorded by `train`.
DataOptions data_options_from(const Checkpoint& cp, DataOptions base) {
    if (cp.metadata.contains("data")) {
        const auto& d = cp.metadata.at("data");
        base.max_diseases = d.at("max_diseases").get<std::size_t>();
        base.split = d.at("split").get<double>();
    }
    return base;
}

Checkpoint load_checked(const std::string& path, const Dataset& dataset) {
    if (!fs::is_regular_file(path)) throw UsageError("checkpoint not found: " + path);
    Checkpoint cp = load_checkpoint(fs::path(path));
    if (cp.state.num_patients() != dataset.num_patients() ||
        cp.state.num_diseases() != dataset.num_diseases()) {
        throw DataError(fmt::format(
            "checkpoint shape ({} patients, {} diseases) does not match the data ({}, {})",
            cp.state.num_patients(), cp.state.num_diseases(), dataset.num_patients(),
            dataset.num_diseases()));
    }
    return cp;
}

void add_data_options(CLI::App* cmd, DataOptions& d, bool with_prep) {
    cmd->add_option("--data", d.data_dir, "Directory holding interactions.csv and demographics.csv")
        ->capture_default_str();
    cmd->add_option("--interactions", d.interactions, "Interactions CSV (overrides --data)");
    cmd->add_option("--demographics", d.demographics, "Demographics CSV (overrides --data)");
    if (with_prep) {
        cmd->add_option("--max-diseases", d.max_diseases, "Keep the N most frequent diseases")
            ->capture_default_str();
        cmd->add_option("--split", d.split, "Per-patient temporal train fraction")
            ->capture_default_str();
    }
}

json metrics_json(const MetricReport& r) {
    return {{"K", r.cutoff},
            {"evaluated_patients", r.evaluated()},
            {"recall", r.mean.recall},
            {"precision", r.mean.precision},
            {"ndcg", r.mean.ndcg},
            {"hit", r.mean.hit},
            {"auc", r.mean_auc}};
}

int cmd_generate(const GlobalOptions& g, const SynthConfig& base, std::ostream& out) {
    SynthConfig config = base;
    config.seed = g.seed;
    try {
        config.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    const SyntheticData data = synth_generate(config);
    const auto files = write_synthetic(g.out_dir, data, config);
    out << fmt::format("wrote {} patients, {} interactions\n", data.tables.demographics.size(),
                       data.tables.interactions.size());
    for (const auto& f : files) out << "  " << f.string() << '\n';
    return kSuccess;
}

int cmd_train(const GlobalOptions& g, const DataOptions& d, const ModelOptions& m,
              TrainConfig tc, std::size_t checkpoint_every, std::ostream& out,
              std::ostream& err) {
    if (m.layers == 0) throw UsageError("--layers must be >= 1");
    const ModelConfig mc = m.to_config(g.seed);
    tc.seed = g.seed + 1;
    try {
        mc.validate();
        tc.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    const Dataset dataset = load_dataset(d);
    if (mc.fixed_dim != 0 && mc.fixed_dim != dataset.features.cols())
        throw UsageError(fmt::format("--fixed must be 0 or {}", dataset.features.cols()));

    const fs::path dir(g.out_dir);
    fs::create_directories(dir);
    json echo;
    echo["command"] = "train";
    echo["seed"] = g.seed;
    echo["data"] = d.echo();
    echo["model"] = mc;
    echo["train"] = tc;

    auto make_checkpoint = [&](const ModelState& state, std::size_t epochs_done) {
        Checkpoint cp{state, json::object()};
        cp.metadata = echo;
        cp.metadata["epochs_completed"] = epochs_done;
        return cp;
    };

    const FitResult result = fit(dataset, mc, tc, [&](const EpochRecord& rec, const ModelState& s) {
        out << fmt::format("epoch {:>4}  loss {:.6f}  probe {:.4f}  {:.2f}s\n", rec.epoch,
                           rec.mean_loss, rec.probe_loss, rec.wall_seconds);
        if (checkpoint_every > 0 && rec.epoch % checkpoint_every == 0) {
            save_checkpoint(dir / fmt::format("checkpoint_epoch_{}.json", rec.epoch),
                            make_checkpoint(s, rec.epoch));
        }
    });

    save_checkpoint(dir / "checkpoint.json", make_checkpoint(result.state, result.log.size()));
    std::ostringstream log;
    write_training_log(log, result.log);
    log << config_line(echo);
    write_file(dir / "train_log.csv", log.str());

    if (result.diverged) {
        err << "error: training diverged: " << result.diagnostic
            << "; wrote the last good state to " << (dir / "checkpoint.json").string() << '\n';
        return kRuntimeError;
    }
    out << fmt::format("trained {} epochs on {} patients x {} diseases ({} train interactions)\n",
                       result.log.size(), dataset.num_patients(), dataset.num_diseases(),
                       dataset.train.nnz());
    return kSuccess;
}

int cmd_eval(const GlobalOptions& g, const DataOptions& d, const std::string& checkpoint_path,
             std::size_t k, const std::string& baseline, std::ostream& out) {
    if (k == 0) throw UsageError("--k must be >= 1");
    if (!baseline.empty() && baseline != "mfbpr")
        throw UsageError("unknown baseline '" + baseline + "' (allowed: mfbpr)");
    if (!fs::is_regular_file(checkpoint_path))
        throw UsageError("checkpoint not found: " + checkpoint_path);
    const Checkpoint probe = load_checkpoint(fs::path(checkpoint_path));
    const DataOptions prep = data_options_from(probe, d);
    const Dataset dataset = load_dataset(prep);
    const Checkpoint cp = load_checked(checkpoint_path, dataset);

    const MetricReport report = evaluate(cp.state, dataset, k);
    json echo;
    echo["command"] = "eval";
    echo["K"] = k;
    echo["data"] = prep.echo();
    echo["model"] = cp.state.config;
    if (cp.metadata.contains("train")) echo["train"] = cp.metadata.at("train");
    if (!baseline.empty()) echo["baseline"] = baseline;

    const fs::path dir(g.out_dir);
    fs::create_directories(dir);
    std::ostringstream csv;
    write_report_csv(csv, report, dataset);
    csv << config_line(echo);
    write_file(dir / "eval_report.csv", csv.str());

    json summary;
    summary["config"] = echo;
    summary["cldd"] = metrics_json(report);
    out << fmt::format("{:<8} K={} patients={} auc={:.4f} recall={:.4f} precision={:.4f} "
                       "ndcg={:.4f} hit={:.4f}\n",
                       "CLDD", k, report.evaluated(), report.mean_auc, report.mean.recall,
                       report.mean.precision, report.mean.ndcg, report.mean.hit);

    if (baseline == "mfbpr") {
        ModelConfig mf;
        mf.embedding_dim = cp.state.config.embedding_dim;
        mf.fixed_dim = 0;
        mf.num_layers = 0;
        mf.layer_dims.clear();
        mf.dropout.clear();
        mf.seed = cp.state.config.seed;
        TrainConfig tc;
        if (cp.metadata.contains("train")) tc = cp.metadata.at("train").get<TrainConfig>();
        const FitResult mf_result = fit(dataset, mf, tc);
        if (mf_result.diverged) throw std::runtime_error("MF-BPR baseline diverged: " + mf_result.diagnostic);
        const MetricReport mf_report = evaluate(mf_result.state, dataset, k);
        std::ostringstream mf_csv;
        write_report_csv(mf_csv, mf_report, dataset);
        mf_csv << config_line(echo);
        write_file(dir / "eval_report_mfbpr.csv", mf_csv.str());
        summary["mfbpr"] = metrics_json(mf_report);
        out << fmt::format("{:<8} K={} patients={} auc={:.4f} recall={:.4f} precision={:.4f} "
                           "ndcg={:.4f} hit={:.4f}\n",
                           "MF-BPR", k, mf_report.evaluated(), mf_report.mean_auc,
                           mf_report.mean.recall, mf_report.mean.precision, mf_report.mean.ndcg,
                           mf_report.mean.hit);
    }
    write_file(dir / "eval_summary.json", summary.dump(2) + "\n");
    return kSuccess;
}

int cmd_predict(const GlobalOptions& g, const DataOptions& d, const std::string& checkpoint_path,
                const std::string& patient, std::size_t k, std::ostream& out) {
    if (k == 0) throw UsageError("--k must be >= 1");
    if (!fs::is_regular_file(checkpoint_path))
        throw UsageError("checkpoint not found: " + checkpoint_path);
    const Checkpoint probe = load_checkpoint(fs::path(checkpoint_path));
    const DataOptions prep = data_options_from(probe, d);
    const Dataset dataset = load_dataset(prep);
    const Checkpoint cp = load_checked(checkpoint_path, dataset);
    if (!dataset.patient_index(patient)) throw UsageError("unknown patient id '" + patient + "'");

    const FinalEmbeddings z = embed(cp.state, GraphOperators::build(dataset.train));
    const auto rows = case_report(z, dataset, patient, k);

    json echo;
    echo["command"] = "predict";
    echo["patient"] = patient;
    echo["K"] = k;
    echo["data"] = prep.echo();
    echo["model"] = cp.state.config;

    const fs::path dir(g.out_dir);
    fs::create_directories(dir);
    std::ostringstream csv;
    write_case_report_csv(csv, patient, rows);
    csv << config_line(echo);
    write_file(dir / ("predict_" + patient + ".csv"), csv.str());

    out << fmt::format("patient {}: top-{} predictions (* = masked test diagnosis)\n", patient, k);
    for (const auto& r : rows)
        out << fmt::format("  {:>3}. {:<12} {:>12.6f} {}\n", r.rank, r.code, r.score, r.hit ? "*" : "");
    return kSuccess;
}

int cmd_analyze(const GlobalOptions& g, const DataOptions& d, const std::string& checkpoint_path,
                const std::string& embeddings_path, std::size_t top, const std::string& kind,
                std::ostream& out) {
    NodeFilter filter = NodeFilter::All;
    if (kind == "patient") filter = NodeFilter::Patients;
    else if (kind == "disease") filter = NodeFilter::Diseases;
    else if (kind != "all") throw UsageError("--kind must be all, patient or disease");

    json echo;
    echo["command"] = "analyze";
    echo["top"] = top;

    const fs::path dir(g.out_dir);
    Dataset dataset;
    Matrix disease_embeddings;
    std::optional<FinalEmbeddings> z;
    if (!embeddings_path.empty()) {
        if (!fs::is_regular_file(embeddings_path))
            throw UsageError("embedding file not found: " + embeddings_path);
        dataset = load_dataset(d);
        echo["data"] = d.echo();
        echo["source"] = "embeddings";
        std::ifstream in(embeddings_path);
        const ImportedEmbeddings imported = import_embeddings(in);
        std::map<std::string, std::size_t> row_of;
        for (std::size_t i = 0; i < imported.ids.size(); ++i)
            if (imported.kinds[i] == "disease") row_of.emplace(imported.ids[i], i);
        disease_embeddings = Matrix(dataset.num_diseases(), imported.values.cols());
        for (std::size_t dd = 0; dd < dataset.num_diseases(); ++dd) {
            auto it = row_of.find(dataset.disease_codes[dd]);
            if (it == row_of.end())
                throw DataError("embedding file has no row for disease '" + dataset.disease_codes[dd] + "'");
            auto src = imported.values.row(it->second);
            std::copy(src.begin(), src.end(), disease_embeddings.row(dd).begin());
        }
    } else {
        if (!fs::is_regular_file(checkpoint_path))
            throw UsageError("checkpoint not found: " + checkpoint_path);
        const Checkpoint probe = load_checkpoint(fs::path(checkpoint_path));
        const DataOptions prep = data_options_from(probe, d);
        dataset = load_dataset(prep);
        const Checkpoint cp = load_checked(checkpoint_path, dataset);
        echo["data"] = prep.echo();
        echo["model"] = cp.state.config;
        echo["source"] = "checkpoint";
        z = embed(cp.state, GraphOperators::build(dataset.train));
        disease_embeddings = disease_rows(*z);
    }

    const InteractionMatrix full = dataset.full();
    const auto records = discrepancy_rank(full, disease_embeddings, dataset.disease_codes, top);

    fs::create_directories(dir);
    std::ostringstream csv;
    write_discrepancy_csv(csv, records);
    csv << config_line(echo);
    write_file(dir / "discrepancy.csv", csv.str());
    if (z) {
        std::ostringstream emb;
        export_embeddings(emb, *z, full, dataset.patient_ids, dataset.disease_codes, filter);
        emb << config_line(echo);
        write_file(dir / "embeddings.csv", emb.str());
    }

    out << fmt::format("{} disease pairs written (largest discrepancy first)\n", records.size());
    for (std::size_t i = 0; i < std::min<std::size_t>(records.size(), 10); ++i) {
        const auto& r = records[i];
        out << fmt::format("  {:<10} {:<10} comorbidity {:.4f}  pearson {:+.4f}  discrepancy {:.4f}{}\n",
                           r.code_a, r.code_b, r.comorbidity, r.pearson, r.discrepancy,
                           r.low_support ? "  (low support)" : "");
    }
    return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Collaborative disease detection: graph propagation + BPR ranking", "cldd"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--config", g.config_path, "Flat key = value config file (flags take precedence)");
    app.add_option("--seed", g.seed, "Seed for every random stream")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads for sparse products")
        ->check(CLI::Range(1u, 1024u))
        ->capture_default_str();
    app.add_option("--out", g.out_dir, "Output directory")->capture_default_str();

    SynthConfig synth;
    auto* generate = app.add_subcommand("generate", "Write a planted synthetic dataset");
    generate->add_option("--patients", synth.patients)->capture_default_str();
    generate->add_option("--diseases", synth.diseases)->capture_default_str();
    generate->add_option("--rank", synth.rank)->capture_default_str();
    generate->add_option("--density", synth.density, "Interactions per patient / D, in (0, 0.5)")
        ->capture_default_str();
    generate->add_flag("--confound", synth.confound,
                       "Correlate latent preferences with the age bucket");

    DataOptions data;
    ModelOptions model;
    TrainConfig train_config;
    std::size_t checkpoint_every = 0;
    auto* train = app.add_subcommand("train", "Fit the model and write checkpoint.json + train_log.csv");
    add_data_options(train, data, true);
    train->add_option("--k", model.k, "Embedding width")->capture_default_str();
    train->add_option("--fixed", model.fixed, "Frozen attribute width (0 or 43)")->capture_default_str();
    train->add_option("--layers", model.layers, "Propagation depth L")->capture_default_str();
    train->add_option("--hops", model.hops, "Max hop order K")->capture_default_str();
    train->add_option("--dim", model.dim, "Width of layers 2..L")->capture_default_str();
    train->add_option("--dropout", model.dropout)->capture_default_str();
    train->add_option("--leaky-slope", model.leaky_slope)->capture_default_str();
    train->add_option("--lr", train_config.learning_rate)->capture_default_str();
    train->add_option("--batch-size", train_config.batch_size)->capture_default_str();
    train->add_option("--epochs", train_config.epochs)->capture_default_str();
    train->add_option("--l2", train_config.l2, "L2 weight λ")->capture_default_str();
    train->add_option("--negatives", train_config.negatives_per_positive)->capture_default_str();
    train->add_option("--beta1", train_config.beta1)->capture_default_str();
    train->add_option("--beta2", train_config.beta2)->capture_default_str();
    train->add_option("--eps", train_config.epsilon)->capture_default_str();
    bool embeddings_only = false;
    train->add_flag("--reg-embeddings-only", embeddings_only,
                    "Apply L2 to the embedding tables only");
    train->add_option("--checkpoint-every", checkpoint_every, "Also checkpoint every N epochs")
        ->capture_default_str();

    std::string checkpoint = "checkpoint.json";
    std::size_t cutoff = kDefaultCutoff;
    std::string baseline;
    auto* eval = app.add_subcommand("eval", "Ranking metrics on the held-out interactions");
    add_data_options(eval, data, false);
    eval->add_option("--checkpoint", checkpoint)->capture_default_str();
    eval->add_option("--k", cutoff, "Top-K cutoff")->capture_default_str();
    eval->add_option("--baseline", baseline, "Also train and evaluate a baseline (mfbpr)");

    std::string patient;
    std::size_t predict_k = 5;
    auto* predict = app.add_subcommand("predict", "Top-K case report for one patient");
    add_data_options(predict, data, false);
    predict->add_option("--checkpoint", checkpoint)->capture_default_str();
    predict->add_option("--patient", patient)->required();
    predict->add_option("--k", predict_k)->capture_default_str();

    std::string embeddings_path;
    std::size_t top = 50;
    std::string kind = "all";
    auto* analyze = app.add_subcommand("analyze", "Discrepancy ranking and embedding export");
    add_data_options(analyze, data, true);
    analyze->add_option("--checkpoint", checkpoint)->capture_default_str();
    analyze->add_option("--embeddings", embeddings_path,
                        "Use an exported embedding CSV instead of a checkpoint");
    analyze->add_option("--top", top)->capture_default_str();
    analyze->add_option("--kind", kind, "Embedding export filter: all, patient, disease")
        ->capture_default_str();

    std::vector<std::string> argv_storage{"cldd"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_storage) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
        CLI::App* active = app.get_subcommands().front();
        if (!g.config_path.empty()) apply_config_file(g.config_path, app, active);
        set_num_threads(g.threads);
        train_config.regularize_all = !embeddings_only;

        if (active == generate) return cmd_generate(g, synth, out);
        if (active == train) return cmd_train(g, data, model, train_config, checkpoint_every, out, err);
        if (active == eval) return cmd_eval(g, data, checkpoint, cutoff, baseline, out);
        if (active == predict) return cmd_predict(g, data, checkpoint, patient, predict_k, out);
        if (active == analyze)
            return cmd_analyze(g, data, checkpoint, embeddings_path, top, kind, out);
        return kUsageError;
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kSuccess;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kSuccess;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsageError;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsageError;
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
}

}  // namespace cldd::cli
