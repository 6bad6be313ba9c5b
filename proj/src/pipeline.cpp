#include "evicode/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "evicode/error.hpp"

namespace evicode {

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), e.byte);
    }
}

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t count = std::min(workers, n);
    pool.reserve(count);
    for (std::size_t t = 0; t < count; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace

Assets Assets::load(const AssetPaths& paths) {
    Assets a;
    if (paths.code_table.empty()) throw ConfigError("assets.code_table is required");
    a.codes = load_code_table(paths.code_table);
    if (!paths.registry.empty()) a.registry = LocationRegistry::from_json(read_json(paths.registry));
    a.prior = paths.prior_table.empty() ? PriorLocationTable::illustrative(a.registry)
                                        : PriorLocationTable::from_json(read_json(paths.prior_table), a.registry);
    if (!paths.axis_table.empty()) a.axis_table = axis_table_from_json(read_json(paths.axis_table));
    if (!paths.axis_lexicons.empty()) a.axis_lexicons = axis_lexicons_from_json(read_json(paths.axis_lexicons));
    if (a.axis_table.empty() && !a.axis_lexicons) throw ConfigError("assets need an axis table or axis lexicons");
    if (!paths.synonyms.empty()) a.synonyms = SynonymLexicon::from_json(read_json(paths.synonyms));
    if (paths.embeddings.empty()) throw ConfigError("assets.embeddings is required");
    a.embeddings = EmbeddingTable::load(paths.embeddings);
    if (!paths.lexicon.empty()) a.lexicon = Lexicon::load(paths.lexicon);
    if (!paths.verifier_model.empty() && std::filesystem::exists(paths.verifier_model)) {
        a.verifier_model = FeatureVerifierModel::load(paths.verifier_model);
    }
    a.finalize_lexicon();
    return a;
}

void Assets::finalize_lexicon() {
    for (const auto& [code, axes] : axis_table) {
        for (const auto& k : axes.keywords()) lexicon.add(k);
    }
    if (axis_lexicons) lexicon.merge(axis_lexicons->combined());
    for (const auto& [k, syns] : synonyms.entries()) {
        lexicon.add(k);
        for (const auto& s : syns) lexicon.add(s);
    }
}

std::string_view to_string(SupportLevel level) noexcept {
    switch (level) {
        case SupportLevel::Fully:
            return "Fully";
        case SupportLevel::Partially:
            return "Partially";
        case SupportLevel::Unable:
            break;
    }
    return "Unable";
}

SupportLevel support_level_from_string(std::string_view name) {
    if (name == "Fully") return SupportLevel::Fully;
    if (name == "Partially") return SupportLevel::Partially;
    if (name == "Unable") return SupportLevel::Unable;
    throw ValidationError("unknown support level '" + std::string(name) + "'");
}

SupportLevel support_level(const EvidenceSet& evidence, const AxisKnowledge& axes) {
    if (evidence.pieces.empty()) return SupportLevel::Unable;
    const std::set<std::string> covered(evidence.covered_keywords.begin(), evidence.covered_keywords.end());
    std::size_t nonempty = 0;
    std::size_t hit = 0;
    for (Axis a : kAllAxes) {
        const auto& words = axes[a];
        if (words.empty()) continue;
        ++nonempty;
        if (std::any_of(words.begin(), words.end(), [&](const std::string& w) { return covered.contains(w); })) ++hit;
    }
    if (nonempty == 0 || hit == 0) return SupportLevel::Unable;
    return hit == nonempty ? SupportLevel::Fully : SupportLevel::Partially;
}

std::string_view to_string(CandidateStatus status) noexcept {
    switch (status) {
        case CandidateStatus::Verified:
            return "verified";
        case CandidateStatus::Rejected:
            return "rejected";
        case CandidateStatus::Unparseable:
            return "unparseable";
        case CandidateStatus::Unverifiable:
            break;
    }
    return "unverifiable";
}

namespace {

CandidateStatus candidate_status_from_string(std::string_view s) {
    for (auto st : {CandidateStatus::Verified, CandidateStatus::Rejected, CandidateStatus::Unparseable,
                    CandidateStatus::Unverifiable}) {
        if (to_string(st) == s) return st;
    }
    throw ValidationError("unknown candidate status '" + std::string(s) + "'");
}

}  // namespace

nlohmann::ordered_json to_json(const Recommendation& rec) {
    nlohmann::ordered_json out;
    out["rank"] = rec.rank;
    out["code"] = rec.code.code;
    out["description"] = rec.code.description;
    out["p_yes"] = rec.p_yes;
    out["support_level"] = std::string(to_string(rec.support_level));
    out["candidate_rank"] = rec.candidate_rank;
    out["sim"] = rec.sim;
    out["axes"] = to_json(rec.axes);
    out["evidence"] = to_json(rec.evidence);
    return out;
}

nlohmann::ordered_json to_json(const CodingResult& result, bool include_timings) {
    nlohmann::ordered_json out;
    out["record_id"] = result.record_id;
    auto diagnoses = nlohmann::ordered_json::array();
    for (const auto& d : result.diagnoses) {
        nlohmann::ordered_json dj;
        dj["diagnosis_index"] = d.diagnosis_index;
        dj["diagnosis"] = d.diagnosis;
        auto recs = nlohmann::ordered_json::array();
        for (const auto& r : d.recommendations) recs.push_back(to_json(r));
        dj["recommendations"] = std::move(recs);
        auto cands = nlohmann::ordered_json::array();
        for (const auto& c : d.candidates) {
            nlohmann::ordered_json cj;
            cj["code"] = c.code;
            cj["rank"] = c.rank;
            cj["sim"] = c.sim;
            cj["status"] = std::string(to_string(c.status));
            cj["p_yes"] = c.p_yes ? nlohmann::ordered_json(*c.p_yes) : nlohmann::ordered_json(nullptr);
            cj["evidence_count"] = c.evidence_count;
            cj["evidence_tokens"] = c.evidence_tokens;
            if (!c.message.empty()) cj["message"] = c.message;
            cands.push_back(std::move(cj));
        }
        dj["candidates"] = std::move(cands);
        diagnoses.push_back(std::move(dj));
    }
    out["diagnoses"] = std::move(diagnoses);
    auto unverifiable = nlohmann::ordered_json::array();
    for (const auto& u : result.unverifiable) {
        unverifiable.push_back({{"diagnosis_index", u.diagnosis_index}, {"code", u.code}, {"reason", u.reason}});
    }
    out["unverifiable"] = std::move(unverifiable);
    if (include_timings) {
        out["timings_ms"] = {{"candidates", result.timings.candidates_ms},
                             {"evidence", result.timings.evidence_ms},
                             {"verify", result.timings.verify_ms},
                             {"total", result.timings.total_ms}};
    }
    return out;
}

CodingResult coding_result_from_json(const nlohmann::json& j) {
    CodingResult r;
    try {
        r.record_id = j.at("record_id").get<std::string>();
        for (const auto& dj : j.at("diagnoses")) {
            DiagnosisResult d;
            d.diagnosis_index = dj.at("diagnosis_index").get<std::size_t>();
            d.diagnosis = dj.value("diagnosis", std::string{});
            for (const auto& rj : dj.at("recommendations")) {
                Recommendation rec;
                rec.diagnosis_index = d.diagnosis_index;
                rec.rank = rj.at("rank").get<std::size_t>();
                rec.code = make_code(rj.at("code").get<std::string>(), rj.value("description", std::string{}));
                rec.p_yes = rj.at("p_yes").get<double>();
                rec.support_level = support_level_from_string(rj.at("support_level").get<std::string>());
                rec.candidate_rank = rj.value("candidate_rank", std::size_t{0});
                rec.sim = rj.value("sim", 0.0);
                if (rj.contains("axes")) rec.axes = axis_knowledge_from_json(rj["axes"]);
                if (rj.contains("evidence")) {
                    const auto& ej = rj["evidence"];
                    rec.evidence.diagnosis_index = d.diagnosis_index;
                    rec.evidence.code = rec.code;
                    for (const auto& pj : ej.at("pieces")) rec.evidence.pieces.push_back(evidence_piece_from_json(pj));
                    rec.evidence.covered_keywords = ej.at("covered_keywords").get<std::vector<std::string>>();
                }
                d.recommendations.push_back(std::move(rec));
            }
            if (dj.contains("candidates")) {
                for (const auto& cj : dj["candidates"]) {
                    CandidateOutcome c;
                    c.code = cj.at("code").get<std::string>();
                    c.rank = cj.at("rank").get<std::size_t>();
                    c.sim = cj.value("sim", 0.0);
                    c.status = candidate_status_from_string(cj.at("status").get<std::string>());
                    if (cj.contains("p_yes") && cj["p_yes"].is_number()) c.p_yes = cj["p_yes"].get<double>();
                    c.evidence_count = cj.value("evidence_count", std::size_t{0});
                    c.evidence_tokens = cj.value("evidence_tokens", std::vector<std::size_t>{});
                    c.message = cj.value("message", std::string{});
                    d.candidates.push_back(std::move(c));
                }
            }
            r.diagnoses.push_back(std::move(d));
        }
        if (j.contains("unverifiable")) {
            for (const auto& uj : j["unverifiable"]) {
                r.unverifiable.push_back(UnverifiableCandidate{uj.at("diagnosis_index").get<std::size_t>(),
                                                               uj.at("code").get<std::string>(),
                                                               uj.value("reason", std::string{})});
            }
        }
        if (j.contains("timings_ms")) {
            const auto& t = j["timings_ms"];
            r.timings = StageTimings{t.value("candidates", 0.0), t.value("evidence", 0.0), t.value("verify", 0.0),
                                     t.value("total", 0.0)};
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed coding result: ") + e.what());
    }
    return r;
}

Engine::Engine(std::shared_ptr<const Assets> assets, Config config, bool require_verifier)
    : assets_(std::move(assets)), config_(std::move(config)) {
    if (!assets_) throw ConfigError("engine needs assets");
    config_.validate();
    if (assets_->codes.empty()) throw ConfigError("code table is empty");
    ranker_ = std::make_unique<CandidateRanker>(assets_->codes, assets_->lexicon, &assets_->embeddings);

    if (config_.evidence.scorer == Backend::Builtin) {
        scorer_ = std::make_unique<BaselineScorer>(&assets_->lexicon, &assets_->embeddings, config_.evidence.alpha);
    } else {
        scorer_ = std::make_unique<ExternalScorer>(config_.evidence.scorer_endpoint,
                                                   std::chrono::milliseconds(config_.evidence.timeout_ms));
    }
    if (config_.verify.verifier == Backend::Builtin) {
        if (assets_->verifier_model) {
            verifier_ = std::make_unique<FeatureVerifier>(*assets_->verifier_model, config_.evidence.retrieval.max_pieces);
        } else if (require_verifier) {
            throw ConfigError("builtin verifier has no trained model (assets.verifier_model)");
        }
    } else {
        verifier_ = std::make_unique<ExternalVerifier>(config_.verify.verifier_endpoint,
                                                       std::chrono::milliseconds(config_.verify.timeout_ms));
    }

    const AxisTable* table = assets_->axis_table.empty() ? nullptr : &assets_->axis_table;
    const AxisLexicons* lexicons = assets_->axis_lexicons ? &*assets_->axis_lexicons : nullptr;
    for (const auto& code : assets_->codes) {
        try {
            axes_.emplace(code.code, parse_axes(code, table, lexicons));
        } catch (const UnparseableCode& e) {
            axes_.emplace(code.code, std::string(e.what()));
        }
    }
}

CandidateSet Engine::candidates(const Diagnosis& diagnosis) const {
    return ranker_->top_n(diagnosis, config_.candidates.n, config_.candidates.mode, config_.candidates.weights);
}

const AxisKnowledge* Engine::axes_for(const std::string& code) const {
    auto it = axes_.find(code);
    if (it == axes_.end()) return nullptr;
    return std::get_if<AxisKnowledge>(&it->second);
}

std::vector<std::string> Engine::locations_for(const IcdCode& code) const {
    if (config_.evidence.summary_only) return {std::string(kDischargeSummary)};
    return evicode::locations_for(code, assets_->prior, assets_->registry);
}

CandidateAnalysis Engine::analyze(const EmrDocument& doc, std::size_t diagnosis_index,
                                  const CandidateEntry& entry) const {
    const AxisKnowledge* axes = axes_for(entry.code.code);
    if (axes == nullptr) {
        auto it = axes_.find(entry.code.code);
        throw UnparseableCode(it == axes_.end() ? "unknown code " + entry.code.code
                                                : std::get<std::string>(it->second));
    }
    CandidateAnalysis out;
    out.axes = *axes;
    const auto locations = locations_for(entry.code);
    const EvidenceInputs inputs{&assets_->synonyms, &assets_->lexicon, &assets_->embeddings, scorer_.get()};
    out.evidence = build_evidence_set(doc, diagnosis_index, entry.code, *axes, locations, inputs,
                                      config_.evidence.retrieval);
    out.tmpl = build_template(out.evidence, entry.code, config_.template_caps(), assets_->registry, assets_->lexicon,
                              config_.verify.plain_template);
    out.features = extract_features(out.tmpl, out.evidence, out.axes, entry, config_.evidence.retrieval.max_pieces);
    return out;
}

DiagnosisResult Engine::code_diagnosis(const EmrDocument& doc, const Diagnosis& diagnosis,
                                       std::vector<UnverifiableCandidate>* unverifiable, StageTimings* timings) const {
    if (!verifier_) throw ConfigError("engine has no verifier");
    auto t0 = Clock::now();
    const CandidateSet cands = candidates(diagnosis);
    const double candidate_ms = elapsed_ms(t0);

    struct Slot {
        CandidateOutcome outcome;
        std::optional<Recommendation> rec;
        double evidence_ms = 0.0;
        double verify_ms = 0.0;
    };
    std::vector<Slot> slots(cands.entries.size());

    parallel_for(cands.entries.size(), config_.runtime.workers, [&](std::size_t i) {
        const CandidateEntry& entry = cands.entries[i];
        Slot& slot = slots[i];
        slot.outcome.code = entry.code.code;
        slot.outcome.rank = entry.rank;
        slot.outcome.sim = entry.sim;
        auto ts = Clock::now();
        CandidateAnalysis analysis;
        try {
            analysis = analyze(doc, diagnosis.index, entry);
        } catch (const UnparseableCode& e) {
            slot.outcome.status = CandidateStatus::Unparseable;
            slot.outcome.message = e.what();
            slot.evidence_ms = elapsed_ms(ts);
            return;
        } catch (const ScorerError& e) {
            slot.outcome.status = CandidateStatus::Unverifiable;
            slot.outcome.message = e.what();
            slot.evidence_ms = elapsed_ms(ts);
            return;
        }
        slot.evidence_ms = elapsed_ms(ts);
        slot.outcome.evidence_count = analysis.evidence.pieces.size();
        for (const auto& p : analysis.evidence.pieces) {
            slot.outcome.evidence_tokens.push_back(tokenize(p.sentence_text, assets_->lexicon).size());
        }
        ts = Clock::now();
        try {
            const Verdict v =
                verify(analysis.tmpl, analysis.evidence, analysis.axes, entry, *verifier_, config_.verify.threshold);
            slot.outcome.p_yes = v.p_yes;
            slot.outcome.status = v.label == 1 ? CandidateStatus::Verified : CandidateStatus::Rejected;
            if (v.label == 1) {
                Recommendation rec;
                rec.diagnosis_index = diagnosis.index;
                rec.code = entry.code;
                rec.p_yes = v.p_yes;
                rec.support_level = support_level(analysis.evidence, analysis.axes);
                rec.candidate_rank = entry.rank;
                rec.sim = entry.sim;
                rec.axes = std::move(analysis.axes);
                rec.evidence = std::move(analysis.evidence);
                slot.rec = std::move(rec);
            }
        } catch (const VerificationError& e) {
            slot.outcome.status = CandidateStatus::Unverifiable;
            slot.outcome.message = e.what();
        }
        slot.verify_ms = elapsed_ms(ts);
    });

    DiagnosisResult out;
    out.diagnosis_index = diagnosis.index;
    out.diagnosis = diagnosis.text;
    double evidence_ms = 0.0;
    double verify_ms = 0.0;
    for (auto& slot : slots) {
        evidence_ms += slot.evidence_ms;
        verify_ms += slot.verify_ms;
        if (slot.outcome.status == CandidateStatus::Unverifiable && unverifiable != nullptr) {
            unverifiable->push_back(UnverifiableCandidate{diagnosis.index, slot.outcome.code, slot.outcome.message});
        }
        if (slot.rec) out.recommendations.push_back(std::move(*slot.rec));
        out.candidates.push_back(std::move(slot.outcome));
    }
    std::sort(out.recommendations.begin(), out.recommendations.end(),
              [](const Recommendation& a, const Recommendation& b) {
                  if (a.p_yes != b.p_yes) return a.p_yes > b.p_yes;
                  if (a.sim != b.sim) return a.sim > b.sim;
                  return a.code.code < b.code.code;
              });
    for (std::size_t i = 0; i < out.recommendations.size(); ++i) out.recommendations[i].rank = i + 1;
    if (timings != nullptr) {
        timings->candidates_ms += candidate_ms;
        timings->evidence_ms += evidence_ms;
        timings->verify_ms += verify_ms;
    }
    return out;
}

CodingResult Engine::code_document(const EmrDocument& doc) const {
    const auto t0 = Clock::now();
    CodingResult result;
    result.record_id = doc.record_id;
    for (const auto& d : doc.diagnoses) {
        result.diagnoses.push_back(code_diagnosis(doc, d, &result.unverifiable, &result.timings));
    }
    result.timings.total_ms = elapsed_ms(t0);
    return result;
}

}  // namespace evicode
