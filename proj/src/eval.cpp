#include "evicode/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "evicode/error.hpp"
#include "evicode/rng.hpp"

namespace evicode {

namespace {

double ratio(std::size_t num, std::size_t den) { return den == 0 ? 0.0 : static_cast<double>(num) / den; }

}  // namespace

MetricReport evaluate(const std::vector<DiagnosisPrediction>& predictions) {
    MetricReport r;
    r.n_diagnoses = predictions.size();
    std::size_t correct = 0;
    std::size_t top5 = 0;
    for (const auto& p : predictions) {
        const std::string* predicted = p.ranked.empty() ? nullptr : &p.ranked.front();
        if (predicted != nullptr && *predicted == p.gold) {
            ++correct;
            ++r.per_code[p.gold].tp;
        } else {
            ++r.per_code[p.gold].fn;
            if (predicted != nullptr) ++r.per_code[*predicted].fp;
        }
        const auto end = p.ranked.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(5, p.ranked.size()));
        if (std::find(p.ranked.begin(), end, p.gold) != end) ++top5;
    }
    r.accuracy = ratio(correct, predictions.size());
    r.p_at_5 = ratio(top5, predictions.size());
    if (r.per_code.empty()) return r;
    double sp = 0.0, sr = 0.0, sf = 0.0;
    for (const auto& [code, c] : r.per_code) {
        const double prec = ratio(c.tp, c.tp + c.fp);
        const double rec = ratio(c.tp, c.tp + c.fn);
        sp += prec;
        sr += rec;
        sf += prec + rec == 0.0 ? 0.0 : 2.0 * prec * rec / (prec + rec);
    }
    const double k = static_cast<double>(r.per_code.size());
    r.macro_precision = sp / k;
    r.macro_recall = sr / k;
    r.macro_f1 = sf / k;
    return r;
}

MetricReport evaluate(const std::vector<CodingResult>& results, const std::vector<EmrDocument>& golds,
                      const std::vector<IcdCode>& code_table) {
    std::unordered_set<std::string> known;
    for (const auto& c : code_table) known.insert(c.code);
    std::unordered_map<std::string, const CodingResult*> by_id;
    for (const auto& r : results) by_id.emplace(r.record_id, &r);

    std::vector<DiagnosisPrediction> preds;
    for (const auto& doc : golds) {
        if (doc.gold_codes.empty()) continue;
        auto it = by_id.find(doc.record_id);
        if (it == by_id.end()) throw DataMismatch("record " + doc.record_id + " has gold codes but no result");
        for (const auto& [idx, gold] : doc.gold_codes) {
            if (!known.contains(gold)) {
                throw DataMismatch("record " + doc.record_id + ": gold code " + gold + " is not in the code table");
            }
            const auto& diags = it->second->diagnoses;
            auto d = std::find_if(diags.begin(), diags.end(),
                                  [idx = idx](const DiagnosisResult& x) { return x.diagnosis_index == idx; });
            if (d == diags.end()) {
                throw DataMismatch("record " + doc.record_id + ": diagnosis " + std::to_string(idx) +
                                   " has gold code but no result");
            }
            DiagnosisPrediction p;
            p.gold = gold;
            for (const auto& rec : d->recommendations) p.ranked.push_back(rec.code.code);
            preds.push_back(std::move(p));
        }
    }
    return evaluate(preds);
}

nlohmann::ordered_json to_json(const MetricReport& r) {
    nlohmann::ordered_json out;
    out["n_diagnoses"] = r.n_diagnoses;
    out["macro_precision"] = r.macro_precision;
    out["macro_recall"] = r.macro_recall;
    out["macro_f1"] = r.macro_f1;
    out["accuracy"] = r.accuracy;
    out["p_at_5"] = r.p_at_5;
    nlohmann::ordered_json codes = nlohmann::ordered_json::object();
    for (const auto& [code, c] : r.per_code) codes[code] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
    out["per_code"] = std::move(codes);
    return out;
}

std::string render_table(const MetricReport& r, const std::string& title) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    const std::string name = title.empty() ? "model" : title;
    const int w = static_cast<int>(std::max<std::size_t>(8, name.size()));
    os << std::left << std::setw(w) << "" << std::right << std::setw(10) << "Macro P" << std::setw(10) << "Macro R"
       << std::setw(10) << "Macro F1" << std::setw(10) << "Acc" << std::setw(10) << "P@5" << "\n";
    os << std::left << std::setw(w) << name << std::right << std::setw(10) << 100 * r.macro_precision
       << std::setw(10) << 100 * r.macro_recall << std::setw(10) << 100 * r.macro_f1 << std::setw(10)
       << 100 * r.accuracy << std::setw(10) << 100 * r.p_at_5 << "\n";
    os << "(" << r.n_diagnoses << " diagnoses, " << r.per_code.size() << " codes, values in %)\n";
    return os.str();
}

Summary summarize(std::vector<double> values) {
    if (values.empty()) throw PreconditionError("cannot summarise an empty sample");
    Summary s;
    s.count = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / values.size();
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.variance = sq / values.size();
    const std::size_t mid = (values.size() - 1) / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    s.median = values[mid];
    return s;
}

namespace {

Summary summarize_or_empty(std::vector<double> values) {
    return values.empty() ? Summary{} : summarize(std::move(values));
}

}  // namespace

CorpusStats corpus_stats(const std::vector<EmrDocument>& corpus, const std::vector<CodingResult>& results,
                         const Lexicon& lexicon) {
    if (corpus.empty()) throw PreconditionError("corpus is empty");
    CorpusStats st;
    st.records = corpus.size();
    std::vector<double> diag, summary, cands, evidence, tokens;
    for (const auto& doc : corpus) {
        for (const auto& d : doc.diagnoses) diag.push_back(static_cast<double>(tokenize(d.text, lexicon).size()));
        if (const Section* s = doc.section(std::string(kDischargeSummary))) {
            std::size_t n = 0;
            for (const auto& sent : s->sentences) n += sent.tokens(lexicon).size();
            summary.push_back(static_cast<double>(n));
        }
    }
    for (const auto& r : results) {
        for (const auto& d : r.diagnoses) {
            cands.push_back(static_cast<double>(d.candidates.size()));
            for (const auto& c : d.candidates) {
                if (c.status != CandidateStatus::Verified && c.status != CandidateStatus::Rejected) continue;
                evidence.push_back(static_cast<double>(c.evidence_count));
                for (auto t : c.evidence_tokens) tokens.push_back(static_cast<double>(t));
            }
        }
    }
    st.diagnosis_tokens = summarize_or_empty(std::move(diag));
    st.discharge_summary_tokens = summarize_or_empty(std::move(summary));
    st.candidates_per_diagnosis = summarize_or_empty(std::move(cands));
    st.evidence_per_candidate = summarize_or_empty(std::move(evidence));
    st.tokens_per_evidence = summarize_or_empty(std::move(tokens));
    return st;
}

namespace {

const std::array<std::pair<const char*, Summary CorpusStats::*>, 5> kStatFields = {{
    {"diagnosis_tokens", &CorpusStats::diagnosis_tokens},
    {"discharge_summary_tokens", &CorpusStats::discharge_summary_tokens},
    {"candidates_per_diagnosis", &CorpusStats::candidates_per_diagnosis},
    {"evidence_per_candidate", &CorpusStats::evidence_per_candidate},
    {"tokens_per_evidence", &CorpusStats::tokens_per_evidence},
}};

}  // namespace

nlohmann::ordered_json to_json(const CorpusStats& st) {
    nlohmann::ordered_json out;
    out["records"] = st.records;
    for (const auto& [name, field] : kStatFields) {
        const Summary& s = st.*field;
        out[name] = {{"count", s.count}, {"mean", s.mean}, {"variance", s.variance}, {"median", s.median}};
    }
    return out;
}

std::string render_table(const CorpusStats& st) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << std::left << std::setw(26) << "field" << std::right << std::setw(8) << "n" << std::setw(14) << "mean"
       << std::setw(14) << "variance" << std::setw(12) << "median" << "\n";
    for (const auto& [name, field] : kStatFields) {
        const Summary& s = st.*field;
        os << std::left << std::setw(26) << name << std::right << std::setw(8) << s.count << std::setw(14) << s.mean
           << std::setw(14) << s.variance << std::setw(12) << s.median << "\n";
    }
    return os.str();
}

CorpusSplit split_corpus(std::vector<EmrDocument> corpus, const std::array<double, 3>& ratios, std::uint64_t seed) {
    double total = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("split ratios must lie in [0,1]");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    Rng rng(seed);
    for (std::size_t i = corpus.size(); i > 1; --i) {
        std::swap(corpus[i - 1], corpus[rng.below(i)]);
    }
    const std::size_t n = corpus.size();
    const std::size_t n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(ratios[0] * n)));
    const std::size_t n_dev =
        std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(ratios[1] * n)));
    CorpusSplit out;
    auto first = std::make_move_iterator(corpus.begin());
    out.train.assign(first, first + static_cast<std::ptrdiff_t>(n_train));
    out.dev.assign(first + static_cast<std::ptrdiff_t>(n_train), first + static_cast<std::ptrdiff_t>(n_train + n_dev));
    out.test.assign(first + static_cast<std::ptrdiff_t>(n_train + n_dev), std::make_move_iterator(corpus.end()));
    return out;
}

VerifierDataset build_verifier_dataset(const std::vector<EmrDocument>& corpus, const Engine& engine,
                                       std::size_t neg_per_pos) {
    VerifierDataset ds;
    for (const auto& doc : corpus) {
        for (const auto& [idx, gold] : doc.gold_codes) {
            if (idx >= doc.diagnoses.size()) {
                throw DataMismatch("record " + doc.record_id + ": gold index " + std::to_string(idx) +
                                   " has no diagnosis");
            }
            const CandidateSet cands = engine.candidates(doc.diagnoses[idx]);
            const CandidateEntry* g = cands.find(gold);
            if (g == nullptr || engine.axes_for(gold) == nullptr) {
                ++ds.misses;
                continue;
            }
            ds.examples.push_back(LabeledExample{engine.analyze(doc, idx, *g).features, 1});
            ++ds.positives;
            std::size_t taken = 0;
            for (const auto& e : cands.entries) {
                if (taken >= neg_per_pos) break;
                if (e.code.code == gold || engine.axes_for(e.code.code) == nullptr) continue;
                ds.examples.push_back(LabeledExample{engine.analyze(doc, idx, e).features, 0});
                ++ds.negatives;
                ++taken;
            }
        }
    }
    if (ds.positives == 0) throw PreconditionError("verifier dataset has no positive examples");
    return ds;
}

}  // namespace evicode
