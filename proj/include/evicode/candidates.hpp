#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "evicode/corpus.hpp"
#include "evicode/knowledge.hpp"
#include "json.hpp"

namespace evicode {

using Vector = std::vector<double>;

class EmbeddingTable {
public:
    EmbeddingTable() = default;
    explicit EmbeddingTable(std::size_t dim);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return vectors_.size(); }

    void add(std::string token, Vector v);
    /// Zero vector for out-of-vocabulary tokens.
    std::span<const double> lookup(const std::string& token) const;
    bool contains(const std::string& token) const { return vectors_.contains(token); }

    /// Mean of the token vectors, OOV tokens counting as zero.
    Vector mean_pool(const std::vector<std::string>& tokens) const;

    /// Header `dim N`, then `token v1 ... vN` per line.
    static EmbeddingTable load(std::istream& in);
    static EmbeddingTable load(const std::filesystem::path& path);
    void save(std::ostream& out) const;

private:
    std::size_t dim_ = 0;
    std::unordered_map<std::string, Vector> vectors_;
    Vector zero_;
};

/// Cosine similarity; 0 when either vector is zero.
double cosine(std::span<const double> a, std::span<const double> b);

/// Character-level Levenshtein distance over scalar values.
std::size_t levenshtein(std::u32string_view a, std::u32string_view b);

/// 1 - levenshtein / max length. Both strings must be nonempty.
double ed_score(std::string_view diagnosis, std::string_view description);

/// Inverse document frequency over code-description tokens:
/// idf(t) = ln((1 + |C|) / (1 + df(t))) + 1.
class IdfTable {
public:
    IdfTable() = default;
    explicit IdfTable(const std::vector<std::vector<std::string>>& documents);
    /// Uniform weights (every token gets 1).
    static IdfTable uniform();

    double idf(const std::string& token) const;
    std::size_t document_count() const noexcept { return documents_; }

private:
    std::unordered_map<std::string, double> idf_;
    double unseen_ = 1.0;
    std::size_t documents_ = 0;
    bool uniform_ = false;
};

double tf_score(const std::vector<std::string>& diagnosis_tokens, const std::vector<std::string>& description_tokens,
                const IdfTable& idf);
double tf_score(std::string_view diagnosis, std::string_view description, const IdfTable& idf, const Lexicon& lexicon);

/// Cosine of mean-pooled embeddings rescaled to [0,1]; 0 on a zero pooled vector.
double fea_score(const std::vector<std::string>& diagnosis_tokens, const std::vector<std::string>& description_tokens,
                 const EmbeddingTable& emb);

struct SimWeights {
    double ed = 0.35;
    double tf = 0.35;
    double fea = 0.3;

    /// Throws ConfigError unless all weights are non-negative and sum to 1.
    void validate() const;
};

struct ComponentScores {
    double ed = 0.0;
    double tf = 0.0;
    double fea = 0.0;
};

double sim(const ComponentScores& scores, const SimWeights& weights);

enum class RankingMode { Weighted, Tiered };

std::string_view to_string(RankingMode mode) noexcept;
RankingMode ranking_mode_from_string(std::string_view name);

struct CandidateEntry {
    IcdCode code;
    double sim = 0.0;
    double ed = 0.0;
    double tf = 0.0;
    double fea = 0.0;
    std::size_t rank = 0;
};

struct CandidateSet {
    std::size_t diagnosis_index = 0;
    std::vector<CandidateEntry> entries;

    const CandidateEntry* find(std::string_view code) const;
};

nlohmann::ordered_json to_json(const CandidateSet& set);

/// Scores a diagnosis against every code in a fixed table. Description
/// tokens, TF-IDF vectors and pooled embeddings are precomputed once.
class CandidateRanker {
public:
    CandidateRanker(std::vector<IcdCode> codes, Lexicon lexicon, const EmbeddingTable* embeddings);

    const std::vector<IcdCode>& codes() const noexcept { return codes_; }
    const IdfTable& idf() const noexcept { return idf_; }

    /// Component scores of `diagnosis` against every code, in table order.
    std::vector<ComponentScores> score_all(std::string_view diagnosis) const;

    /// Weighted mode ranks by sim. Tiered mode fills 60% of `n` by ED alone,
    /// 20% by TF and the rest by FEA, each tier excluding earlier picks.
    CandidateSet top_n(const Diagnosis& diagnosis, std::size_t n, RankingMode mode, const SimWeights& weights) const;

private:
    struct Precomputed {
        std::u32string description;
        std::unordered_map<std::string, double> tfidf;
        double norm = 0.0;
        Vector pooled;
    };

    std::vector<IcdCode> codes_;
    Lexicon lexicon_;
    const EmbeddingTable* embeddings_;
    IdfTable idf_;
    std::vector<Precomputed> pre_;
};

/// Fraction of diagnoses whose gold code is among their candidates.
double recall_at_n(const std::vector<CandidateSet>& candidates, const std::vector<std::string>& gold);

}  // namespace evicode
