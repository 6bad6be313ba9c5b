#include <gtest/gtest.h>

#include <fstream>

#include "evicode/config.hpp"
#include "evicode/error.hpp"
#include "support.hpp"

using namespace evicode;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

}  // namespace

TEST(Config, DefaultsAreValid) {
    const Config c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.candidates.n, 50u);
    EXPECT_DOUBLE_EQ(c.evidence.retrieval.threshold, 0.65);
    EXPECT_DOUBLE_EQ(c.evidence.retrieval.tau, 0.15);
    EXPECT_EQ(c.evidence.retrieval.max_pieces, 10u);
    EXPECT_EQ(c.verify.max_code_tokens, 32u);
    EXPECT_EQ(c.verify.max_evidence_tokens, 512u);
    EXPECT_DOUBLE_EQ(c.verify.threshold, 0.5);
}

TEST(Config, LoadResolvesRelativePaths) {
    testing_support::TempDir dir;
    write_file(dir.path() / "c.json", R"({
      "assets": {"code_table": "codes.tsv", "embeddings": "/abs/emb.txt"},
      "candidates": {"n": 20, "mode": "tiered", "weights": [0.5, 0.3, 0.2]},
      "evidence": {"T": 0.7, "tau": 0.2, "Q": 5, "filter": false},
      "verify": {"threshold": 0.4, "plain_template": true},
      "runtime": {"workers": 3}
    })");
    const Config c = Config::load(dir.path() / "c.json");
    EXPECT_EQ(c.assets.code_table, dir.path() / "codes.tsv");
    EXPECT_EQ(c.assets.embeddings, std::filesystem::path("/abs/emb.txt"));
    EXPECT_TRUE(c.assets.registry.empty());
    EXPECT_EQ(c.candidates.n, 20u);
    EXPECT_EQ(c.candidates.mode, RankingMode::Tiered);
    EXPECT_DOUBLE_EQ(c.candidates.weights.tf, 0.3);
    EXPECT_DOUBLE_EQ(c.evidence.retrieval.threshold, 0.7);
    EXPECT_FALSE(c.evidence.retrieval.filter);
    EXPECT_EQ(c.evidence.retrieval.max_pieces, 5u);
    EXPECT_TRUE(c.verify.plain_template);
    EXPECT_EQ(c.runtime.workers, 3u);
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.template_caps().max_pieces, 5u);
}

TEST(Config, JsonRoundTrip) {
    Config c;
    c.assets.code_table = "/x/codes.tsv";
    c.evidence.retrieval.threshold = 0.55;
    c.candidates.mode = RankingMode::Tiered;
    const auto j = nlohmann::json::parse(c.to_json().dump());
    const Config back = Config::from_json(j, "/elsewhere");
    EXPECT_EQ(back.to_json().dump(), c.to_json().dump());
}

TEST(Config, OutOfRangeValuesRejected) {
    auto expect_bad = [](auto mutate) {
        Config c;
        mutate(c);
        EXPECT_THROW(c.validate(), ConfigError);
    };
    expect_bad([](Config& c) { c.evidence.retrieval.threshold = 1.5; });
    expect_bad([](Config& c) { c.evidence.retrieval.threshold = -0.1; });
    expect_bad([](Config& c) { c.evidence.retrieval.tau = 2.5; });
    expect_bad([](Config& c) { c.evidence.retrieval.max_pieces = 0; });
    expect_bad([](Config& c) { c.evidence.alpha = 2; });
    expect_bad([](Config& c) { c.candidates.n = 0; });
    expect_bad([](Config& c) { c.candidates.weights.ed = -1; });
    expect_bad([](Config& c) { c.verify.threshold = 1.01; });
    expect_bad([](Config& c) { c.verify.max_evidence_tokens = 0; });
    expect_bad([](Config& c) { c.runtime.workers = 0; });
    expect_bad([](Config& c) { c.evidence.scorer = Backend::External; });
    expect_bad([](Config& c) { c.verify.verifier = Backend::External; });
}

TEST(Config, MalformedFilesRejected) {
    testing_support::TempDir dir;
    EXPECT_THROW(Config::load(dir.path() / "missing.json"), ConfigError);
    write_file(dir.path() / "bad.json", "{ not json");
    EXPECT_THROW(Config::load(dir.path() / "bad.json"), ConfigError);
    write_file(dir.path() / "type.json", R"({"evidence": {"T": "high"}})");
    EXPECT_THROW(Config::load(dir.path() / "type.json"), ConfigError);
    write_file(dir.path() / "mode.json", R"({"candidates": {"mode": "fancy"}})");
    EXPECT_THROW(Config::load(dir.path() / "mode.json"), ConfigError);
    write_file(dir.path() / "backend.json", R"({"verify": {"verifier": "gpu"}})");
    EXPECT_THROW(Config::load(dir.path() / "backend.json"), ConfigError);
    write_file(dir.path() / "arr.json", "[1,2]");
    EXPECT_THROW(Config::load(dir.path() / "arr.json"), ConfigError);
}
