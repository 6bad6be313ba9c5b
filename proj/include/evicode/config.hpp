#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "evicode/candidates.hpp"
#include "evicode/evidence.hpp"
#include "evicode/verify.hpp"
#include "json.hpp"

namespace evicode {

struct AssetPaths {
    std::filesystem::path code_table;
    std::filesystem::path axis_table;
    std::filesystem::path axis_lexicons;
    std::filesystem::path synonyms;
    std::filesystem::path registry;
    std::filesystem::path prior_table;
    std::filesystem::path embeddings;
    std::filesystem::path lexicon;
    std::filesystem::path verifier_model;
};

enum class Backend { Builtin, External };

struct CandidateSettings {
    std::size_t n = 50;
    RankingMode mode = RankingMode::Weighted;
    SimWeights weights;
};

struct EvidenceSettings {
    EvidenceConfig retrieval;
    double alpha = 0.5;
    Backend scorer = Backend::Builtin;
    std::string scorer_endpoint;
    int timeout_ms = 5000;
    /// Ablation: search only the discharge summary.
    bool summary_only = false;
};

struct VerifySettings {
    std::size_t max_code_tokens = 32;
    std::size_t max_evidence_tokens = 512;
    double threshold = 0.5;
    Backend verifier = Backend::Builtin;
    std::string verifier_endpoint;
    int timeout_ms = 5000;
    /// Ablation: evidence pieces carry only their sentence.
    bool plain_template = false;
};

struct RuntimeSettings {
    std::size_t workers = 1;
    std::uint64_t seed = 7;
    std::filesystem::path session_dir;
};

struct Config {
    AssetPaths assets;
    CandidateSettings candidates;
    EvidenceSettings evidence;
    VerifySettings verify;
    RuntimeSettings runtime;

    /// Throws ConfigError on any out-of-range value.
    void validate() const;

    TemplateCaps template_caps() const {
        return TemplateCaps{evidence.retrieval.max_pieces, verify.max_code_tokens, verify.max_evidence_tokens};
    }

    /// Relative asset paths resolve against `base_dir`.
    static Config from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
    static Config load(const std::filesystem::path& path);
    nlohmann::ordered_json to_json() const;
};

}  // namespace evicode
