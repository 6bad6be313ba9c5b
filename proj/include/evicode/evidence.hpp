#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evicode/candidates.hpp"
#include "evicode/corpus.hpp"
#include "evicode/knowledge.hpp"
#include "evicode/line_client.hpp"
#include "json.hpp"

namespace evicode {

struct EvidencePiece {
    std::string sentence_text;
    std::string location_id;
    /// Position of `location_id` in the location list retrieval swept.
    std::size_t location_order = 0;
    std::size_t sentence_index = 0;
    std::vector<std::string> matched_keywords;
    std::size_t repetition_count = 1;
    std::optional<double> score;
};

struct EvidenceSet {
    std::size_t diagnosis_index = 0;
    IcdCode code;
    std::vector<EvidencePiece> pieces;
    std::vector<std::string> covered_keywords;
};

nlohmann::ordered_json to_json(const EvidencePiece& piece);
nlohmann::ordered_json to_json(const EvidenceSet& set);
EvidencePiece evidence_piece_from_json(const nlohmann::json& j);

/// Reliability of a sentence as evidence for a keyword list, in [0,1].
class EvidenceScorer {
public:
    virtual ~EvidenceScorer() = default;
    virtual double score(std::string_view sentence, std::span<const std::string> keywords) const = 0;
    virtual std::vector<double> score_batch(const std::vector<EvidencePiece>& pieces) const;
    virtual std::string id() const = 0;
};

/// alpha * keyword coverage + (1 - alpha) * rescaled embedding cosine between
/// the sentence and the keywords.
class BaselineScorer final : public EvidenceScorer {
public:
    BaselineScorer(const Lexicon* lexicon, const EmbeddingTable* embeddings, double alpha = 0.5);

    double score(std::string_view sentence, std::span<const std::string> keywords) const override;
    std::string id() const override { return "baseline"; }

private:
    const Lexicon* lexicon_;
    const EmbeddingTable* embeddings_;
    double alpha_;
};

double baseline_score(std::string_view sentence, std::span<const std::string> keywords, const Lexicon& lexicon,
                      const EmbeddingTable& embeddings, double alpha);

/// Scorer served by another process. Requests are
/// `{"sentence": s, "keywords": [...]}` answered by `{"score": x}`; the batch
/// form sends an array of requests and expects an array of replies.
class ExternalScorer final : public EvidenceScorer {
public:
    ExternalScorer(std::string endpoint, std::chrono::milliseconds timeout);

    double score(std::string_view sentence, std::span<const std::string> keywords) const override;
    std::vector<double> score_batch(const std::vector<EvidencePiece>& pieces) const override;
    std::string id() const override { return "external:" + client_.endpoint(); }

private:
    LineClient client_;
};

/// Keywords occurring as substrings of the sentence, in keyword order.
std::vector<std::string> keyword_hits(std::string_view sentence, std::span<const std::string> keywords);

/// Sentence with the most keyword hits, earliest on ties; nullopt when none hit.
std::optional<EvidencePiece> best_sentence_at(const Section& section, std::span<const std::string> keywords);

/// Sweeps `locations` in order, taking each location's best sentence when it
/// adds a keyword not yet covered, and stops once every keyword is covered.
std::vector<EvidencePiece> greedy_retrieve(const EmrDocument& doc, std::span<const std::string> keywords,
                                           std::span<const std::string> locations);

/// Scores every piece and keeps those with score >= threshold, in input order.
std::vector<EvidencePiece> filter_reliable(std::vector<EvidencePiece> pieces, const EvidenceScorer& scorer,
                                           double threshold);

/// Clusters pieces by sentence embedding and keeps one representative per
/// cluster, carrying the cluster size as its repetition count.
///
/// k-means runs on unit-normalised mean-pooled embeddings with farthest-point
/// initialisation. k grows from 1 until every point lies within cosine
/// distance `tau` of its centroid. The representative is the highest-scoring
/// member (earliest sentence on ties). Output keeps input order.
std::vector<EvidencePiece> dedup_and_count(const std::vector<EvidencePiece>& pieces, const Lexicon& lexicon,
                                           const EmbeddingTable& embeddings, double tau);

/// Cluster assignment used by dedup_and_count, exposed for testing.
std::vector<std::size_t> cluster_sentences(const std::vector<Vector>& points, double tau);

struct EvidenceConfig {
    double threshold = 0.65;
    double tau = 0.15;
    std::size_t max_pieces = 10;
    /// Off disables the reliability filter (pieces are still scored).
    bool filter = true;

    void validate() const;
};

/// Orders pieces by score desc, then location order, then sentence index.
void sort_evidence(std::vector<EvidencePiece>& pieces);

struct EvidenceInputs {
    const SynonymLexicon* synonyms = nullptr;
    const Lexicon* lexicon = nullptr;
    const EmbeddingTable* embeddings = nullptr;
    const EvidenceScorer* scorer = nullptr;
};

/// Retrieve, filter, deduplicate, order and cap the evidence for one candidate.
EvidenceSet build_evidence_set(const EmrDocument& doc, std::size_t diagnosis_index, const IcdCode& code,
                               const AxisKnowledge& axes, std::span<const std::string> locations,
                               const EvidenceInputs& inputs, const EvidenceConfig& config);

}  // namespace evicode
