#include "evicode/candidates.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "evicode/error.hpp"
#include "evicode/utf8.hpp"

namespace evicode {

EmbeddingTable::EmbeddingTable(std::size_t dim) : dim_(dim), zero_(dim, 0.0) {
    if (dim == 0) throw ValidationError("embedding dimension must be positive");
}

void EmbeddingTable::add(std::string token, Vector v) {
    if (v.size() != dim_) {
        throw ValidationError("embedding for '" + token + "' has length " + std::to_string(v.size()) + ", expected " +
                              std::to_string(dim_));
    }
    vectors_[std::move(token)] = std::move(v);
}

std::span<const double> EmbeddingTable::lookup(const std::string& token) const {
    auto it = vectors_.find(token);
    return it == vectors_.end() ? std::span<const double>(zero_) : std::span<const double>(it->second);
}

Vector EmbeddingTable::mean_pool(const std::vector<std::string>& tokens) const {
    Vector out(dim_, 0.0);
    if (tokens.empty()) return out;
    for (const auto& t : tokens) {
        auto v = lookup(t);
        for (std::size_t i = 0; i < dim_; ++i) out[i] += v[i];
    }
    const double inv = 1.0 / static_cast<double>(tokens.size());
    for (auto& x : out) x *= inv;
    return out;
}

EmbeddingTable EmbeddingTable::load(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (utf8::trim(line).empty()) continue;
        std::istringstream hs(line);
        std::string word;
        hs >> word >> dim;
        if (word != "dim" || !hs || dim == 0) throw ValidationError("embedding header must read 'dim N'");
        break;
    }
    if (dim == 0) throw ValidationError("embedding file has no header");
    EmbeddingTable table(dim);
    while (std::getline(in, line)) {
        ++line_no;
        if (utf8::trim(line).empty()) continue;
        std::istringstream ls(line);
        std::string token;
        ls >> token;
        Vector v;
        v.reserve(dim);
        double x = 0.0;
        while (ls >> x) v.push_back(x);
        if (!ls.eof()) throw ValidationError("embedding line " + std::to_string(line_no) + ": bad number");
        if (v.size() != dim) {
            throw ValidationError("embedding line " + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                                  " values");
        }
        table.add(std::move(token), std::move(v));
    }
    return table;
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open embeddings " + path.string());
    return load(in);
}

void EmbeddingTable::save(std::ostream& out) const {
    out << "dim " << dim_ << "\n";
    std::vector<const std::string*> keys;
    keys.reserve(vectors_.size());
    for (const auto& [k, v] : vectors_) keys.push_back(&k);
    std::sort(keys.begin(), keys.end(), [](const std::string* a, const std::string* b) { return *a < *b; });
    char buf[32];
    for (const auto* k : keys) {
        out << *k;
        for (double x : vectors_.at(*k)) {
            std::snprintf(buf, sizeof buf, " %.17g", x);
            out << buf;
        }
        out << "\n";
    }
}

double cosine(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
    if (a.size() < b.size()) std::swap(a, b);
    std::vector<std::size_t> row(b.size() + 1);
    std::iota(row.begin(), row.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t up = row[j];
            const std::size_t cost = a[i - 1] == b[j - 1] ? 0 : 1;
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + cost});
            diag = up;
        }
    }
    return row[b.size()];
}

namespace {

double ed_score_u32(std::u32string_view a, std::u32string_view b) {
    if (a.empty() || b.empty()) throw PreconditionError("ed_score requires nonempty strings");
    const double longest = static_cast<double>(std::max(a.size(), b.size()));
    return 1.0 - static_cast<double>(levenshtein(a, b)) / longest;
}

using SparseVector = std::unordered_map<std::string, double>;

SparseVector tfidf_vector(const std::vector<std::string>& tokens, const IdfTable& idf) {
    SparseVector v;
    for (const auto& t : tokens) v[t] += 1.0;
    for (auto& [t, w] : v) w *= idf.idf(t);
    return v;
}

double norm(const SparseVector& v) {
    double s = 0.0;
    for (const auto& [t, w] : v) s += w * w;
    return std::sqrt(s);
}

double sparse_cosine(const SparseVector& a, double na, const SparseVector& b, double nb) {
    if (na == 0.0 || nb == 0.0) return 0.0;
    const SparseVector& small = a.size() <= b.size() ? a : b;
    const SparseVector& large = a.size() <= b.size() ? b : a;
    double dot = 0.0;
    for (const auto& [t, w] : small) {
        if (auto it = large.find(t); it != large.end()) dot += w * it->second;
    }
    return std::clamp(dot / (na * nb), 0.0, 1.0);
}

double rescale(double cos) { return 0.5 * (cos + 1.0); }

}  // namespace

double ed_score(std::string_view diagnosis, std::string_view description) {
    return ed_score_u32(utf8::decode(diagnosis), utf8::decode(description));
}

IdfTable::IdfTable(const std::vector<std::vector<std::string>>& documents) : documents_(documents.size()) {
    std::unordered_map<std::string, std::size_t> df;
    for (const auto& doc : documents) {
        std::vector<std::string> unique = doc;
        std::sort(unique.begin(), unique.end());
        unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
        for (const auto& t : unique) ++df[t];
    }
    const double numerator = 1.0 + static_cast<double>(documents_);
    for (const auto& [t, count] : df) idf_[t] = std::log(numerator / (1.0 + static_cast<double>(count))) + 1.0;
    unseen_ = std::log(numerator) + 1.0;
}

IdfTable IdfTable::uniform() {
    IdfTable t;
    t.uniform_ = true;
    return t;
}

double IdfTable::idf(const std::string& token) const {
    if (uniform_) return 1.0;
    auto it = idf_.find(token);
    return it == idf_.end() ? unseen_ : it->second;
}

double tf_score(const std::vector<std::string>& diagnosis_tokens, const std::vector<std::string>& description_tokens,
                const IdfTable& idf) {
    const auto a = tfidf_vector(diagnosis_tokens, idf);
    const auto b = tfidf_vector(description_tokens, idf);
    return sparse_cosine(a, norm(a), b, norm(b));
}

double tf_score(std::string_view diagnosis, std::string_view description, const IdfTable& idf, const Lexicon& lexicon) {
    return tf_score(tokenize(diagnosis, lexicon), tokenize(description, lexicon), idf);
}

double fea_score(const std::vector<std::string>& diagnosis_tokens, const std::vector<std::string>& description_tokens,
                 const EmbeddingTable& emb) {
    const Vector a = emb.mean_pool(diagnosis_tokens);
    const Vector b = emb.mean_pool(description_tokens);
    const bool a_zero = std::all_of(a.begin(), a.end(), [](double x) { return x == 0.0; });
    const bool b_zero = std::all_of(b.begin(), b.end(), [](double x) { return x == 0.0; });
    if (a_zero || b_zero) return 0.0;
    return rescale(cosine(a, b));
}

void SimWeights::validate() const {
    if (ed < 0.0 || tf < 0.0 || fea < 0.0) throw ConfigError("similarity weights must be non-negative");
    if (std::abs(ed + tf + fea - 1.0) > 1e-9) throw ConfigError("similarity weights must sum to 1");
}

double sim(const ComponentScores& scores, const SimWeights& weights) {
    return weights.ed * scores.ed + weights.tf * scores.tf + weights.fea * scores.fea;
}

std::string_view to_string(RankingMode mode) noexcept { return mode == RankingMode::Weighted ? "weighted" : "tiered"; }

RankingMode ranking_mode_from_string(std::string_view name) {
    if (name == "weighted") return RankingMode::Weighted;
    if (name == "tiered") return RankingMode::Tiered;
    throw ConfigError("unknown ranking mode '" + std::string(name) + "'");
}

const CandidateEntry* CandidateSet::find(std::string_view code) const {
    for (const auto& e : entries) {
        if (e.code.code == code) return &e;
    }
    return nullptr;
}

nlohmann::ordered_json to_json(const CandidateSet& set) {
    nlohmann::ordered_json out;
    out["diagnosis_index"] = set.diagnosis_index;
    auto entries = nlohmann::ordered_json::array();
    for (const auto& e : set.entries) {
        entries.push_back({{"code", e.code.code},
                           {"description", e.code.description},
                           {"rank", e.rank},
                           {"sim", e.sim},
                           {"ed", e.ed},
                           {"tf", e.tf},
                           {"fea", e.fea}});
    }
    out["entries"] = std::move(entries);
    return out;
}

CandidateRanker::CandidateRanker(std::vector<IcdCode> codes, Lexicon lexicon, const EmbeddingTable* embeddings)
    : codes_(std::move(codes)), lexicon_(std::move(lexicon)), embeddings_(embeddings) {
    std::vector<std::vector<std::string>> docs;
    docs.reserve(codes_.size());
    for (const auto& c : codes_) docs.push_back(tokenize(c.description, lexicon_));
    idf_ = IdfTable(docs);
    pre_.reserve(codes_.size());
    for (std::size_t i = 0; i < codes_.size(); ++i) {
        Precomputed p;
        p.description = utf8::decode(codes_[i].description);
        p.tfidf = tfidf_vector(docs[i], idf_);
        p.norm = norm(p.tfidf);
        if (embeddings_ != nullptr) p.pooled = embeddings_->mean_pool(docs[i]);
        pre_.push_back(std::move(p));
    }
}

std::vector<ComponentScores> CandidateRanker::score_all(std::string_view diagnosis) const {
    const std::u32string d = utf8::decode(diagnosis);
    const auto tokens = tokenize(diagnosis, lexicon_);
    const auto d_tfidf = tfidf_vector(tokens, idf_);
    const double d_norm = norm(d_tfidf);
    Vector d_pooled;
    bool d_zero = true;
    if (embeddings_ != nullptr) {
        d_pooled = embeddings_->mean_pool(tokens);
        d_zero = std::all_of(d_pooled.begin(), d_pooled.end(), [](double x) { return x == 0.0; });
    }
    std::vector<ComponentScores> out(codes_.size());
    for (std::size_t i = 0; i < codes_.size(); ++i) {
        const auto& p = pre_[i];
        out[i].ed = ed_score_u32(d, p.description);
        out[i].tf = sparse_cosine(d_tfidf, d_norm, p.tfidf, p.norm);
        if (!d_zero) {
            const bool c_zero = std::all_of(p.pooled.begin(), p.pooled.end(), [](double x) { return x == 0.0; });
            out[i].fea = c_zero ? 0.0 : rescale(cosine(d_pooled, p.pooled));
        }
    }
    return out;
}

CandidateSet CandidateRanker::top_n(const Diagnosis& diagnosis, std::size_t n, RankingMode mode,
                                    const SimWeights& weights) const {
    if (n == 0) throw PreconditionError("top_n requires n >= 1");
    if (codes_.empty()) throw PreconditionError("top_n requires a nonempty code table");
    weights.validate();
    const auto scores = score_all(diagnosis.text);
    std::vector<double> sims(codes_.size());
    for (std::size_t i = 0; i < codes_.size(); ++i) sims[i] = sim(scores[i], weights);

    auto order_by = [&](auto key) {
        return [&, key](std::size_t a, std::size_t b) {
            const double ka = key(a);
            const double kb = key(b);
            if (ka != kb) return ka > kb;
            return codes_[a].code < codes_[b].code;
        };
    };

    std::vector<std::size_t> picked;
    const std::size_t limit = std::min(n, codes_.size());
    if (mode == RankingMode::Weighted) {
        std::vector<std::size_t> idx(codes_.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        auto cmp = order_by([&](std::size_t i) { return sims[i]; });
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(limit), idx.end(), cmp);
        picked.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(limit));
    } else {
        const auto tier1 = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n)));
        const auto tier2 = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
        const std::size_t tier3 = n - std::min(n, tier1 + tier2);
        std::vector<char> taken(codes_.size(), 0);
        auto fill = [&](std::size_t count, auto key) {
            std::vector<std::size_t> rest;
            for (std::size_t i = 0; i < codes_.size(); ++i) {
                if (!taken[i]) rest.push_back(i);
            }
            const std::size_t k = std::min(count, rest.size());
            auto cmp = order_by(key);
            std::partial_sort(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(k), rest.end(), cmp);
            for (std::size_t j = 0; j < k; ++j) {
                taken[rest[j]] = 1;
                picked.push_back(rest[j]);
            }
        };
        fill(std::min(tier1, n), [&](std::size_t i) { return scores[i].ed; });
        fill(tier2, [&](std::size_t i) { return scores[i].tf; });
        fill(tier3, [&](std::size_t i) { return scores[i].fea; });
    }

    CandidateSet out;
    out.diagnosis_index = diagnosis.index;
    out.entries.reserve(picked.size());
    for (std::size_t r = 0; r < picked.size(); ++r) {
        const std::size_t i = picked[r];
        out.entries.push_back(CandidateEntry{codes_[i], sims[i], scores[i].ed, scores[i].tf, scores[i].fea, r + 1});
    }
    return out;
}

double recall_at_n(const std::vector<CandidateSet>& candidates, const std::vector<std::string>& gold) {
    if (candidates.size() != gold.size()) {
        throw PreconditionError("recall_at_n: " + std::to_string(candidates.size()) + " candidate sets but " +
                                std::to_string(gold.size()) + " gold codes");
    }
    if (gold.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (candidates[i].find(gold[i]) != nullptr) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(gold.size());
}

}  // namespace evicode
