#pragma once

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "evicode/candidates.hpp"
#include "evicode/config.hpp"
#include "evicode/corpus.hpp"
#include "evicode/evidence.hpp"
#include "evicode/knowledge.hpp"
#include "evicode/verify.hpp"
#include "json.hpp"

namespace evicode {

/// Loaded, immutable knowledge assets shared by every coding request.
struct Assets {
    std::vector<IcdCode> codes;
    AxisTable axis_table;
    std::optional<AxisLexicons> axis_lexicons;
    SynonymLexicon synonyms;
    LocationRegistry registry = LocationRegistry::standard();
    PriorLocationTable prior;
    EmbeddingTable embeddings;
    /// Segmentation lexicon: the lexicon file plus every axis keyword and synonym.
    Lexicon lexicon;
    std::optional<FeatureVerifierModel> verifier_model;

    /// Missing optional paths fall back to defaults (standard registry,
    /// illustrative prior table, empty synonyms).
    static Assets load(const AssetPaths& paths);

    /// Adds axis keywords and synonyms to `lexicon`.
    void finalize_lexicon();
};

inline constexpr std::string_view kDischargeSummary = "discharge-summary";

enum class SupportLevel { Fully, Partially, Unable };

std::string_view to_string(SupportLevel level) noexcept;
SupportLevel support_level_from_string(std::string_view name);

/// Fully when every nonempty axis has a keyword among the covered keywords,
/// Partially when some do, Unable when none do or there is no evidence.
SupportLevel support_level(const EvidenceSet& evidence, const AxisKnowledge& axes);

struct Recommendation {
    std::size_t diagnosis_index = 0;
    IcdCode code;
    double p_yes = 0.0;
    std::size_t rank = 0;
    EvidenceSet evidence;
    AxisKnowledge axes;
    SupportLevel support_level = SupportLevel::Unable;
    std::size_t candidate_rank = 0;
    double sim = 0.0;
};

enum class CandidateStatus { Verified, Rejected, Unparseable, Unverifiable };

std::string_view to_string(CandidateStatus status) noexcept;

/// Per-candidate diagnostics, kept for every ranked candidate.
struct CandidateOutcome {
    std::string code;
    std::size_t rank = 0;
    double sim = 0.0;
    CandidateStatus status = CandidateStatus::Rejected;
    std::optional<double> p_yes;
    std::size_t evidence_count = 0;
    std::vector<std::size_t> evidence_tokens;
    std::string message;
};

struct DiagnosisResult {
    std::size_t diagnosis_index = 0;
    std::string diagnosis;
    std::vector<Recommendation> recommendations;
    std::vector<CandidateOutcome> candidates;
};

struct UnverifiableCandidate {
    std::size_t diagnosis_index = 0;
    std::string code;
    std::string reason;
};

struct StageTimings {
    double candidates_ms = 0.0;
    double evidence_ms = 0.0;
    double verify_ms = 0.0;
    double total_ms = 0.0;
};

struct CodingResult {
    std::string record_id;
    std::vector<DiagnosisResult> diagnoses;
    std::vector<UnverifiableCandidate> unverifiable;
    StageTimings timings;
};

/// Key order is fixed so equal results serialise to equal bytes.
nlohmann::ordered_json to_json(const Recommendation& rec);
nlohmann::ordered_json to_json(const CodingResult& result, bool include_timings = true);
CodingResult coding_result_from_json(const nlohmann::json& j);

/// Everything computed for one candidate on the way to a verdict.
struct CandidateAnalysis {
    AxisKnowledge axes;
    EvidenceSet evidence;
    VerificationTemplate tmpl;
    FeatureVector features{};
};

class Engine {
public:
    /// Validates the config and builds the ranker, scorer and verifier. A
    /// builtin verifier without a trained model is allowed only when
    /// `require_verifier` is false (dataset building, training).
    Engine(std::shared_ptr<const Assets> assets, Config config, bool require_verifier = true);

    const Config& config() const noexcept { return config_; }
    const Assets& assets() const noexcept { return *assets_; }
    const CandidateRanker& ranker() const noexcept { return *ranker_; }

    CandidateSet candidates(const Diagnosis& diagnosis) const;

    /// Axis knowledge for a code, or nullptr when unparseable.
    const AxisKnowledge* axes_for(const std::string& code) const;

    std::vector<std::string> locations_for(const IcdCode& code) const;

    /// Evidence, template and features for one candidate. Throws
    /// UnparseableCode or ScorerError.
    CandidateAnalysis analyze(const EmrDocument& doc, std::size_t diagnosis_index, const CandidateEntry& entry) const;

    DiagnosisResult code_diagnosis(const EmrDocument& doc, const Diagnosis& diagnosis,
                                   std::vector<UnverifiableCandidate>* unverifiable = nullptr,
                                   StageTimings* timings = nullptr) const;

    CodingResult code_document(const EmrDocument& doc) const;

private:
    std::shared_ptr<const Assets> assets_;
    Config config_;
    std::unique_ptr<CandidateRanker> ranker_;
    std::unique_ptr<EvidenceScorer> scorer_;
    std::unique_ptr<Verifier> verifier_;
    std::unordered_map<std::string, std::variant<AxisKnowledge, std::string>> axes_;
};

}  // namespace evicode
