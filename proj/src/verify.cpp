#include "evicode/verify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "evicode/error.hpp"
#include "evicode/rng.hpp"
#include "evicode/utf8.hpp"

namespace evicode {

namespace {

constexpr char32_t kSeparatorCp = 0x2225;

std::string escape_field(std::string_view field, bool escape_comma) {
    std::u32string out;
    for (char32_t cp : utf8::decode(field)) {
        if (cp == U'\\' || cp == U'|' || (escape_comma && cp == U',')) {
            out.push_back(U'\\');
            out.push_back(cp);
        } else if (cp == kSeparatorCp) {
            out += U"||";
        } else {
            out.push_back(cp);
        }
    }
    return utf8::encode(out);
}

/// Splits an escaped field list on `separator`, unescaping as it goes.
std::vector<std::string> split_escaped(std::u32string_view raw, char32_t separator, std::size_t offset_base) {
    std::vector<std::string> fields;
    std::u32string current;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const char32_t cp = raw[i];
        if (cp == U'\\') {
            if (i + 1 >= raw.size()) throw ParseError("dangling escape in formatted evidence", offset_base + i);
            current.push_back(raw[++i]);
        } else if (cp == U'|') {
            if (i + 1 >= raw.size() || raw[i + 1] != U'|') {
                throw ParseError("unescaped '|' in formatted evidence", offset_base + i);
            }
            current.push_back(kSeparatorCp);
            ++i;
        } else if (cp == separator) {
            fields.push_back(utf8::encode(current));
            current.clear();
        } else {
            current.push_back(cp);
        }
    }
    fields.push_back(utf8::encode(current));
    return fields;
}

/// Splits on the top-level field separator without unescaping.
std::vector<std::u32string> split_top(std::u32string_view raw) {
    std::vector<std::u32string> out(1);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] == U'\\' && i + 1 < raw.size()) {
            out.back().push_back(raw[i]);
            out.back().push_back(raw[++i]);
        } else if (raw[i] == kSeparatorCp) {
            out.emplace_back();
        } else {
            out.back().push_back(raw[i]);
        }
    }
    return out;
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// -log(sigmoid(z)), computed without overflow.
double softplus_neg(double z) { return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z)); }

}  // namespace

FormattedEvidence format_evidence(const EvidencePiece& piece, const LocationRegistry& registry, bool plain) {
    FormattedEvidence f;
    f.text = piece.sentence_text;
    f.plain = plain;
    if (plain) {
        f.repetitions = 1;
        f.canonical_string = escape_field(f.text, false);
        return f;
    }
    f.keywords = piece.matched_keywords;
    f.origin = registry.name_of(piece.location_id);
    f.repetitions = piece.repetition_count;

    std::string keywords;
    for (std::size_t i = 0; i < f.keywords.size(); ++i) {
        if (i > 0) keywords += ",";
        keywords += escape_field(f.keywords[i], true);
    }
    const std::string sep(kFieldSeparator);
    f.canonical_string = escape_field(f.text, false) + sep + keywords + sep + escape_field(f.origin, false) + sep +
                         std::to_string(f.repetitions);
    return f;
}

FormattedEvidence parse_formatted_evidence(std::string_view canonical) {
    const std::u32string cps = utf8::decode(canonical);
    const auto fields = split_top(cps);
    FormattedEvidence f;
    f.canonical_string = std::string(canonical);
    if (fields.size() == 1) {
        f.plain = true;
        f.text = split_escaped(fields[0], 0, 0).front();
        return f;
    }
    if (fields.size() != 4) throw ParseError("formatted evidence must have 1 or 4 fields", 0);
    f.text = split_escaped(fields[0], 0, 0).front();
    if (!fields[1].empty()) f.keywords = split_escaped(fields[1], U',', 0);
    f.origin = split_escaped(fields[2], 0, 0).front();
    const std::string reps = utf8::encode(fields[3]);
    if (reps.empty() || !std::all_of(reps.begin(), reps.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw ParseError("repetition field '" + reps + "' is not a count", canonical.size() - reps.size());
    }
    f.repetitions = std::stoul(reps);
    return f;
}

VerificationTemplate build_template(const EvidenceSet& evidence, const IcdCode& code, const TemplateCaps& caps,
                                    const LocationRegistry& registry, const Lexicon& lexicon, bool plain) {
    VerificationTemplate t;
    t.plain = plain;
    t.code_tokens = tokenize(code.description, lexicon);
    if (t.code_tokens.empty()) throw PreconditionError("code " + code.code + " has an empty description");
    if (t.code_tokens.size() > caps.max_code_tokens) t.code_tokens.resize(caps.max_code_tokens);

    std::size_t budget = caps.max_evidence_tokens;
    for (const auto& piece : evidence.pieces) {
        if (t.evidence.size() >= caps.max_pieces) break;
        FormattedEvidence f = format_evidence(piece, registry, plain);
        auto tokens = tokenize(f.canonical_string, lexicon);
        if (tokens.size() > budget) break;
        budget -= tokens.size();
        t.evidence.push_back(std::move(f));
        t.evidence_tokens.push_back(std::move(tokens));
    }

    t.serialized.emplace_back(markers::kCls);
    for (const auto& tokens : t.evidence_tokens) t.serialized.insert(t.serialized.end(), tokens.begin(), tokens.end());
    for (std::size_t i = 0; i < VerificationTemplate::kSoftBeforeCode; ++i) t.serialized.emplace_back(markers::kSoft);
    t.serialized.insert(t.serialized.end(), t.code_tokens.begin(), t.code_tokens.end());
    for (std::size_t i = 0; i < VerificationTemplate::kSoftAfterCode; ++i) t.serialized.emplace_back(markers::kSoft);
    t.serialized.emplace_back(markers::kMask);
    return t;
}

bool has_template_layout(const std::vector<std::string>& serialized) {
    // Equivalent to the pattern  C w* S S S w+ S M  over marker classes.
    std::string shape;
    shape.reserve(serialized.size());
    for (const auto& tok : serialized) {
        if (tok == markers::kCls) {
            shape.push_back('C');
        } else if (tok == markers::kSoft) {
            shape.push_back('S');
        } else if (tok == markers::kMask) {
            shape.push_back('M');
        } else {
            shape.push_back('w');
        }
    }
    if (shape.size() < 7 || shape.front() != 'C' || !shape.ends_with("SM")) return false;
    const std::string_view middle = std::string_view(shape).substr(1, shape.size() - 3);
    const auto soft = middle.find("SSS");
    if (soft == std::string_view::npos) return false;
    const auto before = middle.substr(0, soft);
    const auto after = middle.substr(soft + 3);
    return !after.empty() && before.find_first_not_of('w') == std::string_view::npos &&
           after.find_first_not_of('w') == std::string_view::npos;
}

std::string_view Verbalizer::word(int label) {
    if (label == 1) return kYes;
    if (label == 0) return kNo;
    throw PreconditionError("label must be 0 or 1");
}

int Verbalizer::label(std::string_view word) {
    if (word == kYes) return 1;
    if (word == kNo) return 0;
    throw PreconditionError("'" + std::string(word) + "' is not a label word");
}

nlohmann::json Verbalizer::to_json() { return {{"yes", std::string(kYes)}, {"no", std::string(kNo)}}; }

Verdict make_verdict(double p_yes, double threshold, std::string verifier_id) {
    if (!(p_yes >= 0.0 && p_yes <= 1.0)) {
        throw VerificationError("verifier " + verifier_id + " returned p_yes " + std::to_string(p_yes) +
                                " outside [0,1]");
    }
    return Verdict{p_yes >= threshold ? 1 : 0, p_yes, std::move(verifier_id)};
}

const std::array<std::string_view, kFeatureCount>& feature_names() {
    static const std::array<std::string_view, kFeatureCount> names = {
        "coverage_etiology", "coverage_anatomy", "coverage_pathology", "coverage_manifestation",
        "mean_score",        "max_score",        "evidence_fraction",  "log1p_repetitions",
        "candidate_sim",     "reciprocal_rank",  "objective_origin_fraction",
    };
    return names;
}

bool is_objective_location(std::string_view id) {
    static const std::set<std::string_view> kObjective = {
        "vital-signs",        "general-examination", "blood-routine",     "urine-routine",  "stool-routine",
        "biochemistry",       "coagulation",         "immunology",        "tumor-markers",  "microbiology",
        "blood-gas",          "electrocardiogram",   "echocardiography",  "ultrasound",     "x-ray",
        "ct",                 "mri",                 "endoscopy",         "pathology-report", "angiography",
        "pulmonary-function", "electroencephalogram", "electromyography", "bone-marrow",    "genetic-testing",
    };
    return kObjective.contains(id) || id.ends_with("-examination") || id == "examination-results" ||
           id == "testing-results";
}

FeatureVector extract_features(const VerificationTemplate& tmpl, const EvidenceSet& evidence,
                               const AxisKnowledge& axes, const CandidateEntry& candidate, std::size_t max_pieces) {
    FeatureVector x{};
    const std::set<std::string> covered(evidence.covered_keywords.begin(), evidence.covered_keywords.end());
    for (std::size_t a = 0; a < kAllAxes.size(); ++a) {
        const auto& words = axes[kAllAxes[a]];
        if (words.empty()) {
            x[a] = 1.0;
            continue;
        }
        std::size_t hit = 0;
        for (const auto& w : words) hit += covered.contains(w) ? 1 : 0;
        x[a] = static_cast<double>(hit) / static_cast<double>(words.size());
    }
    if (!evidence.pieces.empty()) {
        double sum = 0.0;
        double best = 0.0;
        for (const auto& p : evidence.pieces) {
            const double s = p.score.value_or(0.0);
            sum += s;
            best = std::max(best, s);
        }
        x[kMeanScore] = sum / static_cast<double>(evidence.pieces.size());
        x[kMaxScore] = best;
    }
    x[kEvidenceFraction] =
        max_pieces == 0 ? 0.0 : static_cast<double>(evidence.pieces.size()) / static_cast<double>(max_pieces);
    if (!tmpl.plain && !tmpl.evidence.empty()) {
        double reps = 0.0;
        std::size_t objective = 0;
        for (std::size_t i = 0; i < tmpl.evidence.size(); ++i) {
            reps += static_cast<double>(tmpl.evidence[i].repetitions);
            if (i < evidence.pieces.size() && is_objective_location(evidence.pieces[i].location_id)) ++objective;
        }
        x[kRepetitions] = std::log1p(reps);
        x[kObjectiveOrigin] = static_cast<double>(objective) / static_cast<double>(tmpl.evidence.size());
    }
    x[kCandidateSim] = candidate.sim;
    x[kReciprocalRank] = candidate.rank == 0 ? 0.0 : 1.0 / static_cast<double>(candidate.rank);
    return x;
}

double FeatureVerifierModel::predict(const FeatureVector& x) const {
    if (!trained) throw VerificationError("feature verifier model is untrained");
    double z = bias;
    for (std::size_t i = 0; i < kFeatureCount; ++i) z += weights[i] * x[i];
    return sigmoid(z);
}

nlohmann::ordered_json FeatureVerifierModel::to_json() const {
    nlohmann::ordered_json out;
    out["schema_version"] = schema_version;
    out["features"] = std::vector<std::string>(feature_names().begin(), feature_names().end());
    out["weights"] = std::vector<double>(weights.begin(), weights.end());
    out["bias"] = bias;
    return out;
}

FeatureVerifierModel FeatureVerifierModel::from_json(const nlohmann::json& j) {
    FeatureVerifierModel m;
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kFeatureSchemaVersion) {
        throw ValidationError("verifier model schema " + std::to_string(m.schema_version) + " is not supported");
    }
    const auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != kFeatureCount) {
        throw ValidationError("verifier model needs " + std::to_string(kFeatureCount) + " weights, got " +
                              std::to_string(w.size()));
    }
    std::copy(w.begin(), w.end(), m.weights.begin());
    m.bias = j.at("bias").get<double>();
    m.trained = true;
    return m;
}

void FeatureVerifierModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << to_json().dump(2) << "\n";
}

FeatureVerifierModel FeatureVerifierModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open verifier model " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("verifier model " + path.string() + ": " + e.what());
    }
}

double logistic_loss(const std::vector<LabeledExample>& data, const FeatureVector& weights, double bias, double l2,
                     FeatureVector* grad_w, double* grad_b) {
    double loss = 0.0;
    FeatureVector gw{};
    double gb = 0.0;
    for (const auto& ex : data) {
        double z = bias;
        for (std::size_t i = 0; i < kFeatureCount; ++i) z += weights[i] * ex.features[i];
        loss += ex.label == 1 ? softplus_neg(z) : softplus_neg(-z);
        const double err = sigmoid(z) - static_cast<double>(ex.label);
        for (std::size_t i = 0; i < kFeatureCount; ++i) gw[i] += err * ex.features[i];
        gb += err;
    }
    const double inv = 1.0 / static_cast<double>(data.size());
    loss *= inv;
    double norm2 = 0.0;
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
        norm2 += weights[i] * weights[i];
        gw[i] = gw[i] * inv + l2 * weights[i];
    }
    loss += 0.5 * l2 * norm2;
    if (grad_w != nullptr) *grad_w = gw;
    if (grad_b != nullptr) *grad_b = gb * inv;
    return loss;
}

TrainResult train_verifier(const std::vector<LabeledExample>& dataset, const TrainOptions& options) {
    if (dataset.empty()) throw PreconditionError("verifier training set is empty");
    bool has_pos = false;
    bool has_neg = false;
    for (const auto& ex : dataset) {
        if (ex.label != 0 && ex.label != 1) throw PreconditionError("labels must be 0 or 1");
        (ex.label == 1 ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) throw PreconditionError("verifier training needs both labels");

    FeatureVerifierModel model;
    Rng rng(options.seed);
    for (auto& w : model.weights) w = rng.uniform(-0.01, 0.01);
    for (std::size_t i : kNonNegativeFeatures) model.weights[i] = std::abs(model.weights[i]);

    FeatureVector gw{};
    double gb = 0.0;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        logistic_loss(dataset, model.weights, model.bias, options.l2, &gw, &gb);
        for (std::size_t i = 0; i < kFeatureCount; ++i) model.weights[i] -= options.learning_rate * gw[i];
        model.bias -= options.learning_rate * gb;
        for (std::size_t i : kNonNegativeFeatures) model.weights[i] = std::max(0.0, model.weights[i]);
    }
    model.trained = true;
    const double loss = logistic_loss(dataset, model.weights, model.bias, options.l2);
    return TrainResult{model, loss};
}

FeatureVerifier::FeatureVerifier(FeatureVerifierModel model, std::size_t max_pieces)
    : model_(std::move(model)), max_pieces_(max_pieces) {
    if (!model_.trained) throw VerificationError("feature verifier model is untrained");
}

double FeatureVerifier::p_yes(const VerificationTemplate& tmpl, const EvidenceSet& evidence, const AxisKnowledge& axes,
                              const CandidateEntry& candidate) const {
    return model_.predict(extract_features(tmpl, evidence, axes, candidate, max_pieces_));
}

ExternalVerifier::ExternalVerifier(std::string endpoint, std::chrono::milliseconds timeout)
    : client_(std::move(endpoint), timeout) {}

double ExternalVerifier::p_yes(const VerificationTemplate& tmpl, const EvidenceSet&, const AxisKnowledge&,
                               const CandidateEntry&) const {
    const nlohmann::json request = {{"template", tmpl.serialized}, {"verbalizer", Verbalizer::to_json()}};
    std::string raw;
    try {
        raw = client_.exchange(request.dump());
    } catch (const Error& e) {
        throw VerificationError(e.what());
    }
    const auto reply = nlohmann::json::parse(raw, nullptr, false);
    if (reply.is_discarded() || !reply.is_object() || !reply.contains("p_yes") || !reply["p_yes"].is_number()) {
        throw VerificationError("verifier " + client_.endpoint() + " replied without a numeric 'p_yes'");
    }
    return reply["p_yes"].get<double>();
}

Verdict verify(const VerificationTemplate& tmpl, const EvidenceSet& evidence, const AxisKnowledge& axes,
               const CandidateEntry& candidate, const Verifier& verifier, double threshold) {
    return make_verdict(verifier.p_yes(tmpl, evidence, axes, candidate), threshold, verifier.id());
}

}  // namespace evicode
