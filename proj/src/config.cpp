#include "evicode/config.hpp"

#include <fstream>

#include "evicode/error.hpp"

namespace evicode {

namespace {

Backend backend_from(const std::string& name, const char* what) {
    if (name == "builtin") return Backend::Builtin;
    if (name == "external") return Backend::External;
    throw ConfigError(std::string(what) + " must be 'builtin' or 'external', got '" + name + "'");
}

std::string backend_name(Backend b) { return b == Backend::Builtin ? "builtin" : "external"; }

template <typename T>
void read(const nlohmann::json& section, const char* key, T& out) {
    if (auto it = section.find(key); it != section.end() && !it->is_null()) {
        try {
            out = it->get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(std::string("config field '") + key + "' has the wrong type");
        }
    }
}

}  // namespace

void Config::validate() const {
    if (candidates.n == 0) throw ConfigError("candidates.n must be at least 1");
    candidates.weights.validate();
    evidence.retrieval.validate();
    if (!(evidence.alpha >= 0.0 && evidence.alpha <= 1.0)) throw ConfigError("evidence.alpha must lie in [0,1]");
    if (evidence.scorer == Backend::External && evidence.scorer_endpoint.empty()) {
        throw ConfigError("external scorer needs evidence.scorer_endpoint");
    }
    if (verify.max_code_tokens == 0 || verify.max_evidence_tokens == 0) {
        throw ConfigError("verify.P and verify.R must be positive");
    }
    if (!(verify.threshold >= 0.0 && verify.threshold <= 1.0)) throw ConfigError("verify.threshold must lie in [0,1]");
    if (verify.verifier == Backend::External && verify.verifier_endpoint.empty()) {
        throw ConfigError("external verifier needs verify.verifier_endpoint");
    }
    if (runtime.workers == 0) throw ConfigError("runtime.workers must be at least 1");
    if (evidence.timeout_ms <= 0 || verify.timeout_ms <= 0) throw ConfigError("timeouts must be positive");
}

Config Config::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw ConfigError("config must be an object");
    Config c;
    auto path_of = [&](const nlohmann::json& section, const char* key, std::filesystem::path& out) {
        std::string raw;
        read(section, key, raw);
        if (raw.empty()) return;
        std::filesystem::path p(raw);
        out = p.is_absolute() ? p : base_dir / p;
    };
    if (auto it = j.find("assets"); it != j.end()) {
        const auto& a = *it;
        path_of(a, "code_table", c.assets.code_table);
        path_of(a, "axis_table", c.assets.axis_table);
        path_of(a, "axis_lexicons", c.assets.axis_lexicons);
        path_of(a, "synonyms", c.assets.synonyms);
        path_of(a, "registry", c.assets.registry);
        path_of(a, "prior_table", c.assets.prior_table);
        path_of(a, "embeddings", c.assets.embeddings);
        path_of(a, "lexicon", c.assets.lexicon);
        path_of(a, "verifier_model", c.assets.verifier_model);
    }
    if (auto it = j.find("candidates"); it != j.end()) {
        const auto& s = *it;
        read(s, "n", c.candidates.n);
        std::string mode = std::string(to_string(c.candidates.mode));
        read(s, "mode", mode);
        c.candidates.mode = ranking_mode_from_string(mode);
        if (auto w = s.find("weights"); w != s.end()) {
            const auto v = w->get<std::vector<double>>();
            if (v.size() != 3) throw ConfigError("candidates.weights must have three entries");
            c.candidates.weights = SimWeights{v[0], v[1], v[2]};
        }
    }
    if (auto it = j.find("evidence"); it != j.end()) {
        const auto& s = *it;
        read(s, "T", c.evidence.retrieval.threshold);
        read(s, "tau", c.evidence.retrieval.tau);
        read(s, "Q", c.evidence.retrieval.max_pieces);
        read(s, "alpha", c.evidence.alpha);
        read(s, "filter", c.evidence.retrieval.filter);
        read(s, "summary_only", c.evidence.summary_only);
        std::string scorer = backend_name(c.evidence.scorer);
        read(s, "scorer", scorer);
        c.evidence.scorer = backend_from(scorer, "evidence.scorer");
        read(s, "endpoint", c.evidence.scorer_endpoint);
        read(s, "timeout_ms", c.evidence.timeout_ms);
    }
    if (auto it = j.find("verify"); it != j.end()) {
        const auto& s = *it;
        read(s, "P", c.verify.max_code_tokens);
        read(s, "R", c.verify.max_evidence_tokens);
        read(s, "threshold", c.verify.threshold);
        read(s, "plain_template", c.verify.plain_template);
        std::string verifier = backend_name(c.verify.verifier);
        read(s, "verifier", verifier);
        c.verify.verifier = backend_from(verifier, "verify.verifier");
        read(s, "endpoint", c.verify.verifier_endpoint);
        read(s, "timeout_ms", c.verify.timeout_ms);
    }
    if (auto it = j.find("runtime"); it != j.end()) {
        const auto& s = *it;
        read(s, "workers", c.runtime.workers);
        read(s, "seed", c.runtime.seed);
        path_of(s, "session_dir", c.runtime.session_dir);
    }
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is malformed: " + e.what());
    }
    return from_json(j, path.parent_path());
}

nlohmann::ordered_json Config::to_json() const {
    nlohmann::ordered_json j;
    auto p = [](const std::filesystem::path& path) { return path.string(); };
    j["assets"] = {{"code_table", p(assets.code_table)},   {"axis_table", p(assets.axis_table)},
                   {"axis_lexicons", p(assets.axis_lexicons)}, {"synonyms", p(assets.synonyms)},
                   {"registry", p(assets.registry)},       {"prior_table", p(assets.prior_table)},
                   {"embeddings", p(assets.embeddings)},   {"lexicon", p(assets.lexicon)},
                   {"verifier_model", p(assets.verifier_model)}};
    j["candidates"] = {{"n", candidates.n},
                       {"mode", std::string(to_string(candidates.mode))},
                       {"weights", {candidates.weights.ed, candidates.weights.tf, candidates.weights.fea}}};
    j["evidence"] = {{"T", evidence.retrieval.threshold},
                     {"tau", evidence.retrieval.tau},
                     {"Q", evidence.retrieval.max_pieces},
                     {"alpha", evidence.alpha},
                     {"filter", evidence.retrieval.filter},
                     {"summary_only", evidence.summary_only},
                     {"scorer", backend_name(evidence.scorer)},
                     {"endpoint", evidence.scorer_endpoint},
                     {"timeout_ms", evidence.timeout_ms}};
    j["verify"] = {{"P", verify.max_code_tokens},
                   {"R", verify.max_evidence_tokens},
                   {"threshold", verify.threshold},
                   {"plain_template", verify.plain_template},
                   {"verifier", backend_name(verify.verifier)},
                   {"endpoint", verify.verifier_endpoint},
                   {"timeout_ms", verify.timeout_ms}};
    j["runtime"] = {{"workers", runtime.workers}, {"seed", runtime.seed}, {"session_dir", p(runtime.session_dir)}};
    return j;
}

}  // namespace evicode
