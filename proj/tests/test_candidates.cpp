#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "evicode/candidates.hpp"
#include "evicode/error.hpp"
#include "evicode/rng.hpp"
#include "evicode/utf8.hpp"

using namespace evicode;

namespace {

/// Textbook full-matrix edit distance.
std::size_t reference_levenshtein(const std::u32string& a, const std::u32string& b) {
    std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
    for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
    for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        }
    }
    return d[a.size()][b.size()];
}

std::u32string random_text(Rng& rng, std::size_t max_len) {
    static const std::u32string alphabet = U"ab肺炎伴x出血";
    std::u32string s(1 + rng.below(max_len), U'a');
    for (auto& c : s) c = alphabet[rng.below(alphabet.size())];
    return s;
}

}  // namespace

TEST(EdScore, Examples) {
    EXPECT_DOUBLE_EQ(ed_score("abc", "abc"), 1.0);
    EXPECT_NEAR(ed_score("abc", "abd"), 0.6667, 1e-4);
    EXPECT_DOUBLE_EQ(ed_score("a", "xyz"), 0.0);
    EXPECT_NEAR(ed_score("脉络膜出血", "脉络膜破裂"), 0.6, 1e-12);
    EXPECT_THROW(ed_score("", "a"), PreconditionError);
}

TEST(EdScore, MatchesReferenceAndIsSymmetric) {
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        const auto a = random_text(rng, 9);
        const auto b = random_text(rng, 9);
        ASSERT_EQ(levenshtein(a, b), reference_levenshtein(a, b));
        ASSERT_EQ(ed_score(utf8::encode(a), utf8::encode(b)), ed_score(utf8::encode(b), utf8::encode(a)));
    }
}

TEST(TfScore, Examples) {
    const auto uni = IdfTable::uniform();
    EXPECT_NEAR(tf_score({"a", "b"}, {"b", "c"}, uni), 0.5, 1e-12);
    EXPECT_NEAR(tf_score({"a", "b", "b"}, {"b", "a", "b"}, uni), 1.0, 1e-12);
    EXPECT_EQ(tf_score({"a"}, {"z"}, uni), 0.0);
    EXPECT_EQ(tf_score({}, {"z"}, uni), 0.0);
}

TEST(IdfTable, SmoothedFormula) {
    const IdfTable idf({{"a", "b"}, {"a"}, {"c"}});
    EXPECT_NEAR(idf.idf("a"), std::log(4.0 / 3.0) + 1.0, 1e-12);
    EXPECT_NEAR(idf.idf("b"), std::log(4.0 / 2.0) + 1.0, 1e-12);
    EXPECT_NEAR(idf.idf("unseen"), std::log(4.0) + 1.0, 1e-12);
}

TEST(FeaScore, Examples) {
    EmbeddingTable emb(2);
    emb.add("v", {1.0, 2.0});
    emb.add("w", {-1.0, -2.0});
    EXPECT_NEAR(fea_score({"v"}, {"v", "v"}, emb), 1.0, 1e-12);
    EXPECT_NEAR(fea_score({"v"}, {"w"}, emb), 0.0, 1e-12);
    EXPECT_EQ(fea_score({"oov"}, {"v"}, emb), 0.0);
}

TEST(Embeddings, LoadSaveRoundTrip) {
    std::istringstream in("dim 3\nb 0.5 0 1\na 1 2 3\n");
    const auto emb = EmbeddingTable::load(in);
    EXPECT_EQ(emb.dim(), 3u);
    std::ostringstream out;
    emb.save(out);
    EXPECT_EQ(out.str(), "dim 3\na 1 2 3\nb 0.5 0 1\n");
    std::istringstream bad("dim 2\na 1\n");
    EXPECT_THROW(EmbeddingTable::load(bad), ValidationError);
    EXPECT_EQ(emb.lookup("missing").size(), 3u);
}

TEST(Sim, Examples) {
    const SimWeights w;
    EXPECT_NEAR(sim({1, 1, 1}, w), 1.0, 1e-12);
    EXPECT_NEAR(sim({0.6, 0.2, 0.5}, w), 0.43, 1e-12);
    EXPECT_EQ(sim({0, 0, 0}, w), 0.0);
}

TEST(Sim, WeightValidation) {
    EXPECT_NO_THROW((SimWeights{0.35, 0.35, 0.3}.validate()));
    EXPECT_THROW((SimWeights{0.5, 0.5, 0.5}.validate()), ConfigError);
    EXPECT_THROW((SimWeights{1.2, -0.2, 0.0}.validate()), ConfigError);
}

TEST(Sim, MonotoneInEachComponent) {
    Rng rng(5);
    const SimWeights w;
    for (int i = 0; i < 1000; ++i) {
        ComponentScores s{rng.uniform(), rng.uniform(), rng.uniform()};
        const double base = sim(s, w);
        ComponentScores up = s;
        up.tf = std::min(1.0, up.tf + rng.uniform() * 0.3);
        ASSERT_GE(sim(up, w), base);
    }
}

namespace {

std::vector<IcdCode> five_codes() {
    return {make_code("J18.900", "肺炎"), make_code("J18.901", "细菌性肺炎"), make_code("J20.900", "急性支气管炎"),
            make_code("K35.900", "急性阑尾炎"), make_code("H31.403", "脉络膜出血和破裂")};
}

}  // namespace

TEST(TopN, FiveCodeTableMatchesHandSort) {
    const Lexicon lex(std::vector<std::string>{"肺炎", "细菌", "急性", "支气管", "阑尾"});
    EmbeddingTable emb(2);
    emb.add("肺炎", {1, 0});
    emb.add("细菌", {0.5, 0.5});
    emb.add("急性", {0, 1});
    const CandidateRanker ranker(five_codes(), lex, &emb);
    const Diagnosis d{0, "细菌肺炎"};
    const auto comps = ranker.score_all(d.text);
    std::vector<std::pair<double, std::string>> expected;
    for (std::size_t i = 0; i < comps.size(); ++i) {
        const auto& c = comps[i];
        expected.emplace_back(0.35 * c.ed + 0.35 * c.tf + 0.3 * c.fea, ranker.codes()[i].code);
    }
    std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const auto set = ranker.top_n(d, 5, RankingMode::Weighted, SimWeights{});
    ASSERT_EQ(set.entries.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(set.entries[i].code.code, expected[i].second);
        EXPECT_NEAR(set.entries[i].sim, expected[i].first, 1e-12);
        EXPECT_EQ(set.entries[i].rank, i + 1);
    }
    EXPECT_EQ(set.entries[0].code.code, "J18.901");
}

TEST(TopN, ExactMatchAtRankOne) {
    const CandidateRanker ranker(five_codes(), Lexicon{}, nullptr);
    const auto set = ranker.top_n(Diagnosis{0, "急性阑尾炎"}, 1, RankingMode::Weighted, SimWeights{0.5, 0.5, 0.0});
    ASSERT_EQ(set.entries.size(), 1u);
    EXPECT_EQ(set.entries[0].code.code, "K35.900");
    EXPECT_NEAR(set.entries[0].sim, 1.0, 1e-12);
}

TEST(TopN, LargeNReturnsWholeTable) {
    const CandidateRanker ranker(five_codes(), Lexicon{}, nullptr);
    EXPECT_EQ(ranker.top_n(Diagnosis{0, "炎"}, 50, RankingMode::Weighted, SimWeights{}).entries.size(), 5u);
    EXPECT_EQ(ranker.top_n(Diagnosis{0, "炎"}, 50, RankingMode::Tiered, SimWeights{}).entries.size(), 5u);
}

TEST(TopN, TieredModeFillsTiersByComponent) {
    std::vector<IcdCode> codes;
    for (int i = 0; i < 100; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "A%02d.%d", i / 10, i % 10);
        std::string desc;
        for (int k = 0; k <= i % 7; ++k) desc += (i + k) % 3 == 0 ? "炎" : ((i + k) % 3 == 1 ? "肺" : "血");
        codes.push_back(make_code(buf, desc));
    }
    const CandidateRanker ranker(codes, Lexicon{}, nullptr);
    const Diagnosis d{0, "肺炎血"};
    const auto set = ranker.top_n(d, 50, RankingMode::Tiered, SimWeights{});
    ASSERT_EQ(set.entries.size(), 50u);
    const auto comps = ranker.score_all(d.text);
    // First 30 are exactly the top 30 codes by ED.
    std::vector<std::pair<double, std::string>> by_ed;
    for (std::size_t i = 0; i < codes.size(); ++i) by_ed.emplace_back(comps[i].ed, codes[i].code);
    std::sort(by_ed.begin(), by_ed.end(),
              [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(set.entries[i].code.code, by_ed[i].second);
    for (std::size_t i = 30; i + 1 < 40; ++i) EXPECT_GE(set.entries[i].tf, set.entries[i + 1].tf);
    std::set<std::string> seen;
    for (const auto& e : set.entries) EXPECT_TRUE(seen.insert(e.code.code).second);
}

TEST(TopN, DeterministicSerialisation) {
    const CandidateRanker ranker(five_codes(), Lexicon{}, nullptr);
    const Diagnosis d{2, "肺炎伴出血"};
    EXPECT_EQ(to_json(ranker.top_n(d, 3, RankingMode::Weighted, SimWeights{})).dump(),
              to_json(ranker.top_n(d, 3, RankingMode::Weighted, SimWeights{})).dump());
}

TEST(RecallAtN, Counting) {
    CandidateSet a, b;
    a.entries.push_back(CandidateEntry{make_code("A00", "x")});
    b.entries.push_back(CandidateEntry{make_code("B00", "y")});
    EXPECT_EQ(recall_at_n({a, b}, {"A00", "B00"}), 1.0);
    EXPECT_EQ(recall_at_n({a, b}, {"C00", "C00"}), 0.0);
    EXPECT_EQ(recall_at_n({a, b, a, b}, {"A00", "A00", "B00", "B00"}), 0.5);
    EXPECT_THROW(recall_at_n({a}, {"A00", "B00"}), PreconditionError);
}
