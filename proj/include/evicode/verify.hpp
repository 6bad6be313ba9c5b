#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "evicode/candidates.hpp"
#include "evicode/evidence.hpp"
#include "evicode/knowledge.hpp"
#include "evicode/line_client.hpp"
#include "json.hpp"

namespace evicode {

/// Field separator of a formatted evidence piece (U+2225 PARALLEL TO).
inline constexpr std::string_view kFieldSeparator = "∥";

/// One evidence piece as the verifier sees it:
/// `text ∥ keywords ∥ origin ∥ repetitions`. A plain piece carries only text.
struct FormattedEvidence {
    std::string text;
    std::vector<std::string> keywords;
    std::string origin;
    std::size_t repetitions = 1;
    bool plain = false;
    std::string canonical_string;

    friend bool operator==(const FormattedEvidence&, const FormattedEvidence&) = default;
};

/// Inside fields, "\" and "|" are backslash-escaped, "∥" becomes "||", and
/// keyword commas are backslash-escaped.
FormattedEvidence format_evidence(const EvidencePiece& piece, const LocationRegistry& registry, bool plain = false);
FormattedEvidence parse_formatted_evidence(std::string_view canonical);

namespace markers {
inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kSoft = "[soft]";
inline constexpr std::string_view kMask = "[mask]";
}  // namespace markers

struct TemplateCaps {
    std::size_t max_pieces = 10;          // Q
    std::size_t max_code_tokens = 32;     // P
    std::size_t max_evidence_tokens = 512;  // R
};

/// [CLS] evidence... [soft][soft][soft] code... [soft][mask]
struct VerificationTemplate {
    std::vector<FormattedEvidence> evidence;
    std::vector<std::vector<std::string>> evidence_tokens;
    std::vector<std::string> code_tokens;
    std::vector<std::string> serialized;
    bool plain = false;

    static constexpr std::size_t kSoftBeforeCode = 3;
    static constexpr std::size_t kSoftAfterCode = 1;
};

/// Evidence in set order, capped at Q pieces and R tokens by dropping whole
/// pieces from the tail; the code description is cut to P tokens.
VerificationTemplate build_template(const EvidenceSet& evidence, const IcdCode& code, const TemplateCaps& caps,
                                    const LocationRegistry& registry, const Lexicon& lexicon, bool plain = false);

/// True when `serialized` has exactly the marker layout above.
bool has_template_layout(const std::vector<std::string>& serialized);

class Verbalizer {
public:
    static constexpr std::string_view kYes = "yes";
    static constexpr std::string_view kNo = "no";

    static std::string_view word(int label);
    static int label(std::string_view word);
    static nlohmann::json to_json();
};

struct Verdict {
    int label = 0;
    double p_yes = 0.0;
    std::string verifier_id;
};

/// Throws VerificationError if p_yes is outside [0,1]. Label 1 iff p_yes >= threshold.
Verdict make_verdict(double p_yes, double threshold, std::string verifier_id);

inline constexpr std::size_t kFeatureCount = 11;
inline constexpr int kFeatureSchemaVersion = 1;
using FeatureVector = std::array<double, kFeatureCount>;

enum FeatureIndex : std::size_t {
    kCoverageEtiology = 0,
    kCoverageAnatomy,
    kCoveragePathology,
    kCoverageManifestation,
    kMeanScore,
    kMaxScore,
    kEvidenceFraction,
    kRepetitions,
    kCandidateSim,
    kReciprocalRank,
    kObjectiveOrigin,
};

const std::array<std::string_view, kFeatureCount>& feature_names();

/// Sections recording examination findings, lab tests or imaging.
bool is_objective_location(std::string_view location_id);

/// Fixed-order feature vector for the built-in verifier.
///
/// Per-axis coverage treats an axis with no keywords as covered. The
/// repetition feature is log1p of the total repetition count visible in the
/// template, so it is zero for plain templates. The last slot is the fraction
/// of template pieces whose origin is an examination, test or imaging section
/// (also zero for plain templates, which carry no origin).
FeatureVector extract_features(const VerificationTemplate& tmpl, const EvidenceSet& evidence,
                               const AxisKnowledge& axes, const CandidateEntry& candidate, std::size_t max_pieces);

struct FeatureVerifierModel {
    FeatureVector weights{};
    double bias = 0.0;
    bool trained = false;
    int schema_version = kFeatureSchemaVersion;

    /// Throws VerificationError when untrained.
    double predict(const FeatureVector& x) const;

    nlohmann::ordered_json to_json() const;
    static FeatureVerifierModel from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static FeatureVerifierModel load(const std::filesystem::path& path);
};

struct LabeledExample {
    FeatureVector features{};
    int label = 0;
};

struct TrainOptions {
    double learning_rate = 0.1;
    std::size_t epochs = 2000;
    double l2 = 1e-3;
    std::uint64_t seed = 7;
};

struct TrainResult {
    FeatureVerifierModel model;
    double final_loss = 0.0;
};

/// Features whose weights are kept non-negative during training.
inline constexpr std::array<std::size_t, 2> kNonNegativeFeatures = {kMeanScore, kMaxScore};

/// Mean logistic loss plus l2/2 * |w|^2, and its gradient (weights then bias).
double logistic_loss(const std::vector<LabeledExample>& data, const FeatureVector& weights, double bias, double l2,
                     FeatureVector* grad_w = nullptr, double* grad_b = nullptr);

/// Full-batch gradient descent on the logistic loss; score-feature weights are
/// projected onto w >= 0 after every step.
TrainResult train_verifier(const std::vector<LabeledExample>& dataset, const TrainOptions& options = {});

/// Decides whether an evidence set supports a candidate.
class Verifier {
public:
    virtual ~Verifier() = default;
    /// Probability of the "yes" label word.
    virtual double p_yes(const VerificationTemplate& tmpl, const EvidenceSet& evidence, const AxisKnowledge& axes,
                         const CandidateEntry& candidate) const = 0;
    virtual std::string id() const = 0;
};

class FeatureVerifier final : public Verifier {
public:
    FeatureVerifier(FeatureVerifierModel model, std::size_t max_pieces);

    double p_yes(const VerificationTemplate& tmpl, const EvidenceSet& evidence, const AxisKnowledge& axes,
                 const CandidateEntry& candidate) const override;
    std::string id() const override { return "feature-lr-v" + std::to_string(model_.schema_version); }
    const FeatureVerifierModel& model() const noexcept { return model_; }

private:
    FeatureVerifierModel model_;
    std::size_t max_pieces_;
};

/// Masked-LM service: sends `{"template": [...], "verbalizer": {...}}` and
/// reads `{"p_yes": x}`, the probability of "yes" at the mask slot.
class ExternalVerifier final : public Verifier {
public:
    ExternalVerifier(std::string endpoint, std::chrono::milliseconds timeout);

    double p_yes(const VerificationTemplate& tmpl, const EvidenceSet& evidence, const AxisKnowledge& axes,
                 const CandidateEntry& candidate) const override;
    std::string id() const override { return "external:" + client_.endpoint(); }

private:
    LineClient client_;
};

Verdict verify(const VerificationTemplate& tmpl, const EvidenceSet& evidence, const AxisKnowledge& axes,
               const CandidateEntry& candidate, const Verifier& verifier, double threshold = 0.5);

}  // namespace evicode
