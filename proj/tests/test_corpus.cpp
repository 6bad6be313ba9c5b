#include <gtest/gtest.h>

#include <fstream>

#include "evicode/corpus.hpp"
#include "evicode/error.hpp"
#include "evicode/knowledge.hpp"
#include "evicode/utf8.hpp"
#include "support.hpp"

using namespace evicode;

namespace {

std::vector<std::string> texts(const std::vector<Sentence>& s) {
    std::vector<std::string> out;
    for (const auto& x : s) out.push_back(x.text);
    return out;
}

}  // namespace

TEST(Utf8, DecodeEncodeRoundTrip) {
    const std::string s = "脉络膜A1　x";
    EXPECT_EQ(utf8::encode(utf8::decode(s)), s);
    EXPECT_EQ(utf8::length("脉络膜"), 3u);
}

TEST(Utf8, InvalidBytesBecomeReplacement) {
    const std::u32string d = utf8::decode(std::string("a\xff" "b"));
    ASSERT_EQ(d.size(), 3u);
    EXPECT_EQ(d[1], U'�');
}

TEST(Utf8, TrimHandlesIdeographicSpace) { EXPECT_EQ(utf8::trim("　 咳嗽 \n"), "咳嗽"); }

TEST(SplitSentences, ChineseAndAsciiTerminators) {
    EXPECT_EQ(texts(split_sentences("发热三天。咳嗽！无胸痛？")),
              (std::vector<std::string>{"发热三天。", "咳嗽！", "无胸痛？"}));
    EXPECT_EQ(texts(split_sentences("fever; cough! ok?")), (std::vector<std::string>{"fever;", "cough!", "ok?"}));
}

TEST(SplitSentences, NewlineSplitsAndIsDropped) {
    EXPECT_EQ(texts(split_sentences("line one\nline two")), (std::vector<std::string>{"line one", "line two"}));
}

TEST(SplitSentences, TerminatorOnlyFragmentsDropped) {
    EXPECT_EQ(texts(split_sentences("a;;b")), (std::vector<std::string>{"a;", "b"}));
    EXPECT_TRUE(split_sentences("  。；\n ").empty());
}

TEST(SplitSentences, IndicesAreSequential) {
    const auto s = split_sentences("一。二。三");
    ASSERT_EQ(s.size(), 3u);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s[i].index, i);
}

TEST(SplitSentences, ContentIsPreserved) {
    const std::string text = "患者发热。咳嗽；乏力!好转";
    std::string joined;
    for (const auto& s : split_sentences(text)) joined += s.text;
    EXPECT_EQ(joined, text);
}

TEST(Tokenize, GreedyLongestMatch) {
    const Lexicon lex(std::vector<std::string>{"脉络膜", "脉络", "出血"});
    EXPECT_EQ(tokenize("脉络膜出血", lex), (std::vector<std::string>{"脉络膜", "出血"}));
    EXPECT_EQ(tokenize("脉络出", lex), (std::vector<std::string>{"脉络", "出"}));
}

TEST(Tokenize, AsciiRunsStayWholeAndSpacesDrop) {
    const Lexicon lex;
    EXPECT_EQ(tokenize("CT 示 abc12", lex), (std::vector<std::string>{"CT", "示", "abc12"}));
}

TEST(Lexicon, LoadSkipsCommentsAndBlankLines) {
    testing_support::TempDir dir;
    const auto p = dir.path() / "lex.txt";
    std::ofstream(p) << "# words\n咳嗽\n\n 发热 \n";
    const Lexicon lex = Lexicon::load(p);
    EXPECT_EQ(lex.size(), 2u);
    EXPECT_TRUE(lex.contains(U"发热"));
}

TEST(Ingest, UnknownLocationsBecomeOther) {
    const auto reg = LocationRegistry::standard();
    const auto doc = ingest_document(
        R"({"record_id":"r1","sections":[{"location_id":"chief-complaint","text":"咳嗽。"},
            {"location_id":"weird","text":"甲。"},{"location_id":"odd","text":"乙。"}],
            "diagnoses":["肺炎"],"gold_codes":{"0":"J18.900"}})",
        reg);
    EXPECT_EQ(doc.unknown_locations, 2u);
    ASSERT_EQ(doc.sections.size(), 2u);
    const Section* other = doc.section("other");
    ASSERT_NE(other, nullptr);
    EXPECT_EQ(other->sentences.size(), 2u);
    EXPECT_EQ(other->sentences[1].index, 1u);
    EXPECT_EQ(doc.gold_codes.at(0), "J18.900");
}

TEST(Ingest, DuplicateLocationRejected) {
    const auto reg = LocationRegistry::standard();
    EXPECT_THROW(ingest_document(R"({"record_id":"r","sections":[{"location_id":"ct","text":"a"},
                                     {"location_id":"ct","text":"b"}]})",
                                 reg),
                 ValidationError);
}

TEST(Ingest, MalformedJsonReportsOffset) {
    const auto reg = LocationRegistry::standard();
    try {
        ingest_document(R"({"record_id": "r",,})", reg);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_GT(e.offset(), 0u);
    }
}

TEST(Ingest, GoldIndexMustExist) {
    const auto reg = LocationRegistry::standard();
    EXPECT_THROW(ingest_document(R"({"record_id":"r","diagnoses":["a"],"gold_codes":{"1":"A00"}})", reg),
                 ValidationError);
    EXPECT_THROW(ingest_document(R"({"record_id":"r","diagnoses":["a"],"gold_codes":{"x":"A00"}})", reg),
                 ValidationError);
    EXPECT_THROW(ingest_document(R"({"record_id":"r","diagnoses":["  "]})", reg), ValidationError);
}

TEST(Ingest, ToJsonRoundTrips) {
    const auto reg = LocationRegistry::standard();
    const auto doc = ingest_document(
        R"({"record_id":"r1","sections":[{"location_id":"ct","text":"肺部阴影。右侧。"}],"diagnoses":["肺炎"],
            "gold_codes":{"0":"J18.900"}})",
        reg);
    const auto again = ingest_record(nlohmann::json::parse(to_json(doc).dump()), reg);
    EXPECT_EQ(to_json(again).dump(), to_json(doc).dump());
}

TEST(LoadCorpus, DirectoryIsReadInNameOrder) {
    testing_support::TempDir dir;
    std::ofstream(dir.path() / "b.json") << R"({"record_id":"second"})";
    std::ofstream(dir.path() / "a.json") << R"({"record_id":"first"})";
    std::ofstream(dir.path() / "notes.txt") << "ignored";
    const auto docs = load_corpus(dir.path(), LocationRegistry::standard());
    ASSERT_EQ(docs.size(), 2u);
    EXPECT_EQ(docs[0].record_id, "first");
}

TEST(LoadCorpus, NdjsonSkipsBlankLines) {
    testing_support::TempDir dir;
    const auto p = dir.path() / "c.ndjson";
    std::ofstream(p) << R"({"record_id":"a"})" << "\n\n" << R"({"record_id":"b"})" << "\n";
    EXPECT_EQ(load_corpus(p, LocationRegistry::standard()).size(), 2u);
}
