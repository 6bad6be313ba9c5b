#include "evicode/evidence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "evicode/error.hpp"

namespace evicode {

nlohmann::ordered_json to_json(const EvidencePiece& piece) {
    nlohmann::ordered_json out;
    out["sentence"] = piece.sentence_text;
    out["location_id"] = piece.location_id;
    out["location_order"] = piece.location_order;
    out["sentence_index"] = piece.sentence_index;
    out["matched_keywords"] = piece.matched_keywords;
    out["repetition_count"] = piece.repetition_count;
    out["score"] = piece.score ? nlohmann::ordered_json(*piece.score) : nlohmann::ordered_json(nullptr);
    return out;
}

nlohmann::ordered_json to_json(const EvidenceSet& set) {
    nlohmann::ordered_json out;
    out["diagnosis_index"] = set.diagnosis_index;
    out["code"] = set.code.code;
    auto pieces = nlohmann::ordered_json::array();
    for (const auto& p : set.pieces) pieces.push_back(to_json(p));
    out["pieces"] = std::move(pieces);
    out["covered_keywords"] = set.covered_keywords;
    return out;
}

EvidencePiece evidence_piece_from_json(const nlohmann::json& j) {
    EvidencePiece p;
    p.sentence_text = j.at("sentence").get<std::string>();
    p.location_id = j.at("location_id").get<std::string>();
    p.location_order = j.value("location_order", std::size_t{0});
    p.sentence_index = j.value("sentence_index", std::size_t{0});
    p.matched_keywords = j.value("matched_keywords", std::vector<std::string>{});
    p.repetition_count = j.value("repetition_count", std::size_t{1});
    if (auto it = j.find("score"); it != j.end() && it->is_number()) p.score = it->get<double>();
    return p;
}

std::vector<double> EvidenceScorer::score_batch(const std::vector<EvidencePiece>& pieces) const {
    std::vector<double> out;
    out.reserve(pieces.size());
    for (const auto& p : pieces) out.push_back(score(p.sentence_text, p.matched_keywords));
    return out;
}

double baseline_score(std::string_view sentence, std::span<const std::string> keywords, const Lexicon& lexicon,
                      const EmbeddingTable& embeddings, double alpha) {
    if (keywords.empty()) throw ScorerError("cannot score a sentence against an empty keyword list");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("baseline scorer alpha must lie in [0,1]");
    const double coverage =
        static_cast<double>(keyword_hits(sentence, keywords).size()) / static_cast<double>(keywords.size());

    std::vector<std::string> keyword_tokens;
    for (const auto& k : keywords) {
        auto t = tokenize(k, lexicon);
        keyword_tokens.insert(keyword_tokens.end(), t.begin(), t.end());
    }
    double cos01 = 0.0;
    if (embeddings.dim() > 0) {
        const Vector s = embeddings.mean_pool(tokenize(sentence, lexicon));
        const Vector k = embeddings.mean_pool(keyword_tokens);
        auto is_zero = [](const Vector& v) { return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }); };
        if (!is_zero(s) && !is_zero(k)) cos01 = 0.5 * (cosine(s, k) + 1.0);
    }
    return std::clamp(alpha * coverage + (1.0 - alpha) * cos01, 0.0, 1.0);
}

BaselineScorer::BaselineScorer(const Lexicon* lexicon, const EmbeddingTable* embeddings, double alpha)
    : lexicon_(lexicon), embeddings_(embeddings), alpha_(alpha) {
    if (lexicon_ == nullptr || embeddings_ == nullptr) throw ConfigError("baseline scorer needs lexicon and embeddings");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("baseline scorer alpha must lie in [0,1]");
}

double BaselineScorer::score(std::string_view sentence, std::span<const std::string> keywords) const {
    return baseline_score(sentence, keywords, *lexicon_, *embeddings_, alpha_);
}

ExternalScorer::ExternalScorer(std::string endpoint, std::chrono::milliseconds timeout)
    : client_(std::move(endpoint), timeout) {}

namespace {

double read_score(const nlohmann::json& reply, const std::string& endpoint) {
    auto it = reply.find("score");
    if (!reply.is_object() || it == reply.end() || !it->is_number()) {
        throw ScorerError("scorer " + endpoint + " replied without a numeric 'score'");
    }
    const double s = it->get<double>();
    if (!(s >= 0.0 && s <= 1.0)) {
        throw ScorerError("scorer " + endpoint + " returned " + std::to_string(s) + " outside [0,1]");
    }
    return s;
}

nlohmann::json scorer_request(std::string_view sentence, std::span<const std::string> keywords) {
    return {{"sentence", std::string(sentence)}, {"keywords", std::vector<std::string>(keywords.begin(), keywords.end())}};
}

}  // namespace

double ExternalScorer::score(std::string_view sentence, std::span<const std::string> keywords) const {
    std::string raw;
    try {
        raw = client_.exchange(scorer_request(sentence, keywords).dump());
    } catch (const Error& e) {
        throw ScorerError(e.what());
    }
    nlohmann::json reply = nlohmann::json::parse(raw, nullptr, false);
    if (reply.is_discarded()) throw ScorerError("scorer " + client_.endpoint() + " sent malformed JSON");
    return read_score(reply, client_.endpoint());
}

std::vector<double> ExternalScorer::score_batch(const std::vector<EvidencePiece>& pieces) const {
    if (pieces.empty()) return {};
    auto request = nlohmann::json::array();
    for (const auto& p : pieces) request.push_back(scorer_request(p.sentence_text, p.matched_keywords));
    std::string raw;
    try {
        raw = client_.exchange(request.dump());
    } catch (const Error& e) {
        throw ScorerError(e.what());
    }
    nlohmann::json reply = nlohmann::json::parse(raw, nullptr, false);
    if (reply.is_discarded() || !reply.is_array() || reply.size() != pieces.size()) {
        throw ScorerError("scorer " + client_.endpoint() + " sent a malformed batch reply");
    }
    std::vector<double> out;
    out.reserve(pieces.size());
    for (const auto& r : reply) out.push_back(read_score(r, client_.endpoint()));
    return out;
}

std::vector<std::string> keyword_hits(std::string_view sentence, std::span<const std::string> keywords) {
    std::vector<std::string> out;
    for (const auto& k : keywords) {
        if (!k.empty() && sentence.find(k) != std::string_view::npos) out.push_back(k);
    }
    return out;
}

std::optional<EvidencePiece> best_sentence_at(const Section& section, std::span<const std::string> keywords) {
    std::optional<EvidencePiece> best;
    for (const auto& s : section.sentences) {
        auto hits = keyword_hits(s.text, keywords);
        if (hits.empty()) continue;
        if (!best || hits.size() > best->matched_keywords.size()) {
            EvidencePiece p;
            p.sentence_text = s.text;
            p.location_id = section.location_id;
            p.sentence_index = s.index;
            p.matched_keywords = std::move(hits);
            best = std::move(p);
        }
    }
    return best;
}

std::vector<EvidencePiece> greedy_retrieve(const EmrDocument& doc, std::span<const std::string> keywords,
                                           std::span<const std::string> locations) {
    if (locations.empty()) throw PreconditionError("greedy_retrieve requires at least one location");
    std::vector<EvidencePiece> out;
    std::set<std::string> wanted(keywords.begin(), keywords.end());
    std::set<std::string> covered;
    if (wanted.empty()) return out;
    for (std::size_t li = 0; li < locations.size(); ++li) {
        const Section* section = doc.section(locations[li]);
        if (section == nullptr) continue;
        auto best = best_sentence_at(*section, keywords);
        if (!best) continue;
        bool adds = false;
        for (const auto& k : best->matched_keywords) adds |= !covered.contains(k);
        if (!adds) continue;
        covered.insert(best->matched_keywords.begin(), best->matched_keywords.end());
        best->location_order = li;
        out.push_back(std::move(*best));
        if (covered == wanted) break;
    }
    return out;
}

std::vector<EvidencePiece> filter_reliable(std::vector<EvidencePiece> pieces, const EvidenceScorer& scorer,
                                           double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("evidence threshold must lie in [0,1]");
    std::vector<double> scores;
    try {
        scores = scorer.score_batch(pieces);
    } catch (const ScorerError&) {
        // Fall back to one piece at a time so the error names the offender.
        scores.clear();
        for (const auto& p : pieces) {
            try {
                scores.push_back(scorer.score(p.sentence_text, p.matched_keywords));
            } catch (const Error& e) {
                throw ScorerError("scoring '" + p.sentence_text + "' at " + p.location_id + " failed: " + e.what());
            }
        }
    }
    std::vector<EvidencePiece> out;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        const double s = scores[i];
        if (!(s >= 0.0 && s <= 1.0)) {
            throw ScorerError("score " + std::to_string(s) + " for '" + pieces[i].sentence_text + "' outside [0,1]");
        }
        pieces[i].score = s;
        if (s >= threshold) out.push_back(std::move(pieces[i]));
    }
    return out;
}

namespace {

constexpr double kZeroDistance = 1e-12;

Vector normalized(const Vector& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    if (n == 0.0) return v;
    n = std::sqrt(n);
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

bool is_zero(const Vector& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

double cosine_distance(const Vector& a, const Vector& b) {
    const bool za = is_zero(a);
    const bool zb = is_zero(b);
    if (za && zb) return 0.0;
    if (za || zb) return 1.0;
    return std::max(0.0, 1.0 - cosine(a, b));
}

}  // namespace

std::vector<std::size_t> cluster_sentences(const std::vector<Vector>& points, double tau) {
    const std::size_t n = points.size();
    if (n == 0) return {};
    std::vector<Vector> unit;
    unit.reserve(n);
    for (const auto& p : points) unit.push_back(normalized(p));

    for (std::size_t k = 1; k <= n; ++k) {
        // Farthest-point initialisation starting from the first point.
        std::vector<std::size_t> seeds{0};
        std::vector<double> nearest(n);
        for (std::size_t i = 0; i < n; ++i) nearest[i] = cosine_distance(unit[i], unit[0]);
        while (seeds.size() < k) {
            std::size_t far = 0;
            for (std::size_t i = 1; i < n; ++i) {
                if (nearest[i] > nearest[far]) far = i;
            }
            if (nearest[far] <= kZeroDistance) break;
            seeds.push_back(far);
            for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], cosine_distance(unit[i], unit[far]));
        }
        const std::size_t clusters = seeds.size();
        std::vector<Vector> centroids;
        for (std::size_t s : seeds) centroids.push_back(unit[s]);

        std::vector<std::size_t> assign(n, 0);
        for (int iter = 0; iter < 100; ++iter) {
            bool changed = iter == 0;
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t best = 0;
                double best_d = cosine_distance(unit[i], centroids[0]);
                for (std::size_t c = 1; c < clusters; ++c) {
                    const double d = cosine_distance(unit[i], centroids[c]);
                    if (d < best_d) {
                        best_d = d;
                        best = c;
                    }
                }
                if (assign[i] != best) {
                    assign[i] = best;
                    changed = true;
                }
            }
            if (!changed) break;
            for (std::size_t c = 0; c < clusters; ++c) {
                Vector sum(unit[0].size(), 0.0);
                std::size_t members = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (assign[i] != c) continue;
                    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += unit[i][d];
                    ++members;
                }
                if (members == 0) continue;
                for (auto& x : sum) x /= static_cast<double>(members);
                centroids[c] = std::move(sum);
            }
        }

        bool within = true;
        for (std::size_t i = 0; i < n && within; ++i) {
            within = cosine_distance(unit[i], centroids[assign[i]]) <= tau + kZeroDistance;
        }
        if (within || clusters < k) {
            // Relabel by first appearance so labels do not depend on seed order.
            std::vector<std::size_t> relabel(clusters, SIZE_MAX);
            std::size_t next = 0;
            for (auto& a : assign) {
                if (relabel[a] == SIZE_MAX) relabel[a] = next++;
                a = relabel[a];
            }
            return assign;
        }
    }
    std::vector<std::size_t> singletons(n);
    for (std::size_t i = 0; i < n; ++i) singletons[i] = i;
    return singletons;
}

std::vector<EvidencePiece> dedup_and_count(const std::vector<EvidencePiece>& pieces, const Lexicon& lexicon,
                                           const EmbeddingTable& embeddings, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("dedup radius tau must lie in (0,1)");
    if (pieces.empty()) return {};
    std::vector<std::size_t> assign;
    if (embeddings.dim() > 0) {
        std::vector<Vector> points;
        points.reserve(pieces.size());
        for (const auto& p : pieces) points.push_back(embeddings.mean_pool(tokenize(p.sentence_text, lexicon)));
        assign = cluster_sentences(points, tau);
    } else {
        // Without embeddings only identical sentences collapse.
        std::vector<std::string> seen;
        for (const auto& p : pieces) {
            auto it = std::find(seen.begin(), seen.end(), p.sentence_text);
            assign.push_back(static_cast<std::size_t>(it - seen.begin()));
            if (it == seen.end()) seen.push_back(p.sentence_text);
        }
    }
    const std::size_t clusters = assign.empty() ? 0 : *std::max_element(assign.begin(), assign.end()) + 1;

    std::vector<std::size_t> rep(clusters, SIZE_MAX);
    std::vector<std::size_t> size(clusters, 0);
    auto score_of = [&](std::size_t i) { return pieces[i].score.value_or(-std::numeric_limits<double>::infinity()); };
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        const std::size_t c = assign[i];
        ++size[c];
        if (rep[c] == SIZE_MAX) {
            rep[c] = i;
            continue;
        }
        const std::size_t r = rep[c];
        if (score_of(i) > score_of(r) ||
            (score_of(i) == score_of(r) && pieces[i].sentence_index < pieces[r].sentence_index)) {
            rep[c] = i;
        }
    }
    std::vector<std::size_t> keep(rep.begin(), rep.end());
    std::sort(keep.begin(), keep.end());
    std::vector<EvidencePiece> out;
    out.reserve(keep.size());
    for (std::size_t i : keep) {
        EvidencePiece p = pieces[i];
        p.repetition_count = size[assign[i]];
        out.push_back(std::move(p));
    }
    return out;
}

void EvidenceConfig::validate() const {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("evidence threshold must lie in [0,1]");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("dedup radius tau must lie in (0,1)");
    if (max_pieces == 0) throw ConfigError("max evidence pieces must be at least 1");
}

void sort_evidence(std::vector<EvidencePiece>& pieces) {
    std::stable_sort(pieces.begin(), pieces.end(), [](const EvidencePiece& a, const EvidencePiece& b) {
        const double sa = a.score.value_or(-1.0);
        const double sb = b.score.value_or(-1.0);
        if (sa != sb) return sa > sb;
        if (a.location_order != b.location_order) return a.location_order < b.location_order;
        return a.sentence_index < b.sentence_index;
    });
}

EvidenceSet build_evidence_set(const EmrDocument& doc, std::size_t diagnosis_index, const IcdCode& code,
                               const AxisKnowledge& axes, std::span<const std::string> locations,
                               const EvidenceInputs& inputs, const EvidenceConfig& config) {
    if (axes.empty()) throw PreconditionError("build_evidence_set requires axis knowledge for " + code.code);
    if (inputs.lexicon == nullptr || inputs.embeddings == nullptr || inputs.scorer == nullptr) {
        throw PreconditionError("build_evidence_set requires lexicon, embeddings and scorer");
    }
    static const SynonymLexicon kNoSynonyms;
    const SynonymLexicon& synonyms = inputs.synonyms != nullptr ? *inputs.synonyms : kNoSynonyms;
    const auto keywords = expand_synonyms(axes.keywords(), synonyms);

    auto pieces = greedy_retrieve(doc, keywords, locations);
    pieces = filter_reliable(std::move(pieces), *inputs.scorer, config.filter ? config.threshold : 0.0);
    pieces = dedup_and_count(pieces, *inputs.lexicon, *inputs.embeddings, config.tau);
    sort_evidence(pieces);
    if (pieces.size() > config.max_pieces) pieces.resize(config.max_pieces);

    EvidenceSet set;
    set.diagnosis_index = diagnosis_index;
    set.code = code;
    std::set<std::string> covered;
    for (const auto& p : pieces) covered.insert(p.matched_keywords.begin(), p.matched_keywords.end());
    for (const auto& k : keywords) {
        if (covered.contains(k)) set.covered_keywords.push_back(k);
    }
    set.pieces = std::move(pieces);
    return set;
}

}  // namespace evicode
