#include "evicode/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "evicode/api.hpp"
#include "evicode/error.hpp"
#include "evicode/eval.hpp"
#include "evicode/pipeline.hpp"
#include "evicode/session.hpp"
#include "evicode/toy.hpp"

namespace evicode::cli {

namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
    std::string config;
    std::string mode;
    std::optional<double> threshold;
    bool no_evidence_filter = false;
    bool summary_only = false;
    bool plain_template = false;
};

Config load_config(const GlobalOptions& g) {
    if (g.config.empty()) throw ConfigError("--config is required for this command");
    Config c = Config::load(g.config);
    if (!g.mode.empty()) c.candidates.mode = ranking_mode_from_string(g.mode);
    if (g.threshold) c.evidence.retrieval.threshold = *g.threshold;
    if (g.no_evidence_filter) c.evidence.retrieval.filter = false;
    if (g.summary_only) c.evidence.summary_only = true;
    if (g.plain_template) c.verify.plain_template = true;
    c.validate();
    return c;
}

std::shared_ptr<const Engine> load_engine(const Config& c, bool require_verifier = true) {
    auto assets = std::make_shared<const Assets>(Assets::load(c.assets));
    return std::make_shared<const Engine>(std::move(assets), c, require_verifier);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<fs::path> json_files(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

/// Raw record texts with a label for error messages: one per file, or one
/// per nonempty line of an NDJSON file.
std::vector<std::pair<std::string, std::string>> raw_records(const fs::path& in) {
    std::vector<std::pair<std::string, std::string>> out;
    if (fs::is_directory(in)) {
        for (const auto& f : json_files(in)) out.emplace_back(f.filename().string(), read_file(f));
        return out;
    }
    std::ifstream file(in, std::ios::binary);
    if (!file) throw ConfigError("cannot open " + in.string());
    std::string line;
    std::size_t n = 0;
    while (std::getline(file, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.emplace_back(in.filename().string() + ":" + std::to_string(n), line);
    }
    return out;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + p.string());
    out << text;
}

int cmd_ingest(const std::string& in, const std::string& registry_path, std::ostream& out) {
    const LocationRegistry registry = registry_path.empty()
                                          ? LocationRegistry::standard()
                                          : LocationRegistry::from_json(nlohmann::json::parse(read_file(registry_path)));
    const auto docs = load_corpus(in, registry);
    std::size_t diagnoses = 0, sentences = 0, unknown = 0, gold = 0;
    for (const auto& d : docs) {
        diagnoses += d.diagnoses.size();
        gold += d.gold_codes.size();
        unknown += d.unknown_locations;
        for (const auto& s : d.sections) sentences += s.sentences.size();
    }
    nlohmann::ordered_json j;
    j["records"] = docs.size();
    j["diagnoses"] = diagnoses;
    j["gold_codes"] = gold;
    j["sentences"] = sentences;
    j["unknown_sections"] = unknown;
    out << j.dump(2) << '\n';
    return kOk;
}

int cmd_code(const Config& cfg, const std::string& in, const std::string& out_dir, bool timings, std::ostream& out,
             std::ostream& err) {
    const auto engine = load_engine(cfg);
    fs::create_directories(out_dir);
    nlohmann::ordered_json errors = nlohmann::ordered_json::array();
    std::size_t written = 0;
    for (const auto& [label, raw] : raw_records(in)) {
        std::string record_id = label;
        try {
            const EmrDocument doc = ingest_document(raw, engine->assets().registry);
            record_id = doc.record_id;
            const CodingResult result = engine->code_document(doc);
            write_text(fs::path(out_dir) / (doc.record_id + ".json"), to_json(result, timings).dump() + "\n");
            ++written;
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            errors.push_back({{"record", record_id}, {"error", e.what()}});
            err << "record " << record_id << ": " << e.what() << '\n';
        }
    }
    const fs::path error_file = fs::path(out_dir) / "errors.ndjson";
    if (!errors.empty()) {
        std::string text;
        for (const auto& e : errors) text += e.dump() + "\n";
        write_text(error_file, text);
    } else if (fs::exists(error_file)) {
        fs::remove(error_file);
    }
    out << "coded " << written << " record(s), " << errors.size() << " failed\n";
    return errors.empty() ? kOk : kCompletedWithErrors;
}

std::vector<CodingResult> load_results(const std::string& dir) {
    std::vector<CodingResult> results;
    for (const auto& f : json_files(dir)) {
        try {
            results.push_back(coding_result_from_json(nlohmann::json::parse(read_file(f))));
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(f.string() + ": " + e.what(), e.byte);
        }
    }
    return results;
}

int cmd_eval(const Config& cfg, const std::string& results_dir, const std::string& gold, const std::string& json_out,
             std::ostream& out) {
    const auto codes = load_code_table(cfg.assets.code_table);
    LocationRegistry registry = LocationRegistry::standard();
    if (!cfg.assets.registry.empty()) registry = LocationRegistry::from_json(nlohmann::json::parse(read_file(cfg.assets.registry)));
    const auto golds = load_corpus(gold, registry);
    const MetricReport report = evaluate(load_results(results_dir), golds, codes);
    out << render_table(report);
    if (!json_out.empty()) write_text(json_out, to_json(report).dump(2) + "\n");
    return kOk;
}

int cmd_stats(const Config& cfg, const std::string& in, const std::string& results_dir, std::ostream& out) {
    const Assets assets = Assets::load(cfg.assets);
    const auto docs = load_corpus(in, assets.registry);
    std::vector<CodingResult> results;
    if (!results_dir.empty()) results = load_results(results_dir);
    out << render_table(corpus_stats(docs, results, assets.lexicon));
    return kOk;
}

int cmd_train(const Config& cfg, const std::string& in, const std::string& model_out, std::size_t neg_per_pos,
              const std::vector<double>& split, std::size_t epochs, std::ostream& out) {
    if (split.size() != 3) throw ConfigError("--split takes three ratios");
    const auto engine = load_engine(cfg, false);
    auto docs = load_corpus(in, engine->assets().registry);
    const auto parts = split_corpus(std::move(docs), {split[0], split[1], split[2]}, cfg.runtime.seed);
    const auto train = build_verifier_dataset(parts.train, *engine, neg_per_pos);
    TrainOptions opts;
    opts.seed = cfg.runtime.seed;
    if (epochs > 0) opts.epochs = epochs;
    const auto result = train_verifier(train.examples, opts);
    auto accuracy = [&](const std::vector<LabeledExample>& data) {
        std::size_t ok = 0;
        for (const auto& ex : data) ok += (result.model.predict(ex.features) >= cfg.verify.threshold) == (ex.label == 1);
        return data.empty() ? 0.0 : static_cast<double>(ok) / data.size();
    };
    result.model.save(model_out);
    out << "train: " << train.positives << " positive, " << train.negatives << " negative, " << train.misses
        << " missed gold; loss " << result.final_loss << ", accuracy " << accuracy(train.examples) << '\n';
    if (!parts.dev.empty()) {
        try {
            const auto dev = build_verifier_dataset(parts.dev, *engine, neg_per_pos);
            out << "dev: " << dev.examples.size() << " examples, accuracy " << accuracy(dev.examples) << '\n';
        } catch (const PreconditionError& e) {
            out << "dev: " << e.what() << '\n';
        }
    }
    return kOk;
}

int cmd_serve(const Config& cfg, const std::string& host, int port, const std::string& data_dir, std::ostream& out) {
    const auto engine = load_engine(cfg);
    const fs::path dir = data_dir.empty() ? cfg.runtime.session_dir : fs::path(data_dir);
    auto store = std::make_shared<RecordStore>(engine->assets().registry, dir);
    ApiService api(engine, store);
    api.serve(host, port, [&](int bound) { out << "listening on " << host << ":" << bound << std::endl; });
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Evidence-grounded ICD coding"};
    app.require_subcommand(1);
    GlobalOptions g;
    app.add_option("--config", g.config, "config file");
    app.add_option("--mode", g.mode, "candidate ranking mode")->check(CLI::IsMember({"weighted", "tiered"}));
    app.add_option("--threshold", g.threshold, "evidence reliability threshold in [0,1]");
    app.add_flag("--no-evidence-filter", g.no_evidence_filter, "keep unreliable evidence");
    app.add_flag("--summary-only", g.summary_only, "retrieve from the discharge summary only");
    app.add_flag("--plain-template", g.plain_template, "evidence pieces carry only their sentence");

    std::string in, out_dir, results, gold, json_out, registry, model_out, host = "127.0.0.1", data_dir;
    bool timings = false;
    std::size_t neg_per_pos = 5, epochs = 0;
    std::uint64_t seed = 7;
    int port = 8080;
    std::vector<double> split = {1.0, 0.0, 0.0};

    auto* ingest = app.add_subcommand("ingest", "validate a corpus");
    ingest->add_option("--in", in, "record directory or NDJSON file")->required();
    ingest->add_option("--registry", registry, "location registry JSON");
    auto* code = app.add_subcommand("code", "code a corpus, one result file per record");
    code->add_option("--in", in, "record directory or NDJSON file")->required();
    code->add_option("--out", out_dir, "output directory")->required();
    code->add_flag("--timings", timings, "include stage timings");
    auto* evalc = app.add_subcommand("eval", "score results against gold codes");
    evalc->add_option("--results", results, "result directory")->required();
    evalc->add_option("--gold", gold, "gold-labeled records")->required();
    evalc->add_option("--json", json_out, "also write the report as JSON");
    auto* stats = app.add_subcommand("stats", "corpus statistics");
    stats->add_option("--in", in, "record directory or NDJSON file")->required();
    stats->add_option("--results", results, "result directory");
    auto* train = app.add_subcommand("train-verifier", "train the builtin verifier");
    train->add_option("--in", in, "gold-labeled records")->required();
    train->add_option("--out", model_out, "model file")->required();
    train->add_option("--neg-per-pos", neg_per_pos, "negatives per gold code");
    train->add_option("--split", split, "train/dev/test ratios")->expected(3)->delimiter(',');
    train->add_option("--epochs", epochs, "gradient steps");
    auto* serve = app.add_subcommand("serve", "serve the HTTP API");
    serve->add_option("--host", host);
    serve->add_option("--port", port);
    serve->add_option("--data-dir", data_dir, "record and session storage");
    auto* toyc = app.add_subcommand("toy", "write the bundled toy corpus and assets");
    toyc->add_option("--out", out_dir, "output directory")->required();
    toyc->add_option("--seed", seed);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    }

    try {
        if (g.threshold && !(*g.threshold >= 0.0 && *g.threshold <= 1.0)) {
            throw ConfigError("--threshold must lie in [0,1]");
        }
        if (*ingest) return cmd_ingest(in, registry, out);
        if (*toyc) {
            const auto w = toy::write(out_dir, seed);
            out << "wrote " << w.config.string() << " and " << w.records.string() << '\n';
            return kOk;
        }
        const Config cfg = load_config(g);
        if (*code) return cmd_code(cfg, in, out_dir, timings, out, err);
        if (*evalc) return cmd_eval(cfg, results, gold, json_out, out);
        if (*stats) return cmd_stats(cfg, in, results, out);
        if (*train) return cmd_train(cfg, in, model_out, neg_per_pos, split, epochs, out);
        if (*serve) return cmd_serve(cfg, host, port, data_dir, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const DataMismatch& e) {
        err << "data mismatch: " << e.what() << '\n';
        return kDataMismatch;
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << '\n';
        return kDataMismatch;
    } catch (const ValidationError& e) {
        err << "invalid data: " << e.what() << '\n';
        return kDataMismatch;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    }
    return kConfigError;
}

}  // namespace evicode::cli
