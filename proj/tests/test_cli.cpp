#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "evicode/cli.hpp"
#include "evicode/pipeline.hpp"
#include "support.hpp"

using namespace evicode;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::size_t json_files(const fs::path& dir) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ".json";
    return n;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliToy : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new testing_support::TempDir();
        const auto r = run({"toy", "--out", toy().string()});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static fs::path toy() { return dir_->path() / "toy"; }
    static std::string config() { return (toy() / "config.json").string(); }
    static std::string records() { return (toy() / "records").string(); }
    static fs::path scratch(const std::string& name) { return dir_->path() / name; }

private:
    static testing_support::TempDir* dir_;
};

testing_support::TempDir* CliToy::dir_ = nullptr;

}  // namespace

TEST_F(CliToy, CodeWritesOneFilePerRecord) {
    const auto out = scratch("out-code");
    const auto r = run({"--config", config(), "code", "--in", records(), "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json_files(out), 5u);
    EXPECT_FALSE(fs::exists(out / "errors.ndjson"));
    const auto j = nlohmann::json::parse(slurp(out / "toy-001.json"));
    EXPECT_EQ(j["record_id"], "toy-001");
    EXPECT_FALSE(j.contains("timings_ms"));

    const auto timed = scratch("out-timed");
    ASSERT_EQ(run({"--config", config(), "code", "--in", records(), "--out", timed.string(), "--timings"}).code, 0);
    EXPECT_TRUE(nlohmann::json::parse(slurp(timed / "toy-001.json")).contains("timings_ms"));
}

TEST_F(CliToy, EvalReportsAndDetectsMismatch) {
    const auto out = scratch("out-eval");
    ASSERT_EQ(run({"--config", config(), "code", "--in", records(), "--out", out.string()}).code, 0);
    const auto report = scratch("report.json");
    const auto r = run({"--config", config(), "eval", "--results", out.string(), "--gold", records(), "--json",
                        report.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_DOUBLE_EQ(nlohmann::json::parse(slurp(report))["accuracy"].get<double>(), 1.0);

    fs::remove(out / "toy-003.json");
    const auto bad = run({"--config", config(), "eval", "--results", out.string(), "--gold", records()});
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.err.find("toy-003"), std::string::npos);
}

TEST_F(CliToy, BadRecordsCompleteWithErrors) {
    const auto in = scratch("mixed");
    fs::create_directories(in);
    fs::copy_file(toy() / "records" / "toy-001.json", in / "toy-001.json");
    std::ofstream(in / "broken.json") << "{\"record_id\": 5}";
    const auto out = scratch("out-mixed");
    const auto r = run({"--config", config(), "code", "--in", in.string(), "--out", out.string()});
    EXPECT_EQ(r.code, 3);
    EXPECT_TRUE(fs::exists(out / "toy-001.json"));
    EXPECT_NE(slurp(out / "errors.ndjson").find("broken"), std::string::npos);
}

TEST_F(CliToy, IngestStatsAndTraining) {
    auto r = run({"ingest", "--in", records()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(nlohmann::json::parse(r.out)["records"], 5);

    r = run({"--config", config(), "stats", "--in", records()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("median"), std::string::npos);

    const auto model = scratch("model.json");
    r = run({"--config", config(), "train-verifier", "--in", records(), "--out", model.string(), "--neg-per-pos", "50",
             "--epochs", "500"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NO_THROW(FeatureVerifierModel::load(model));
}

TEST_F(CliToy, AblationFlagsRun) {
    for (const std::vector<std::string> flags :
         {std::vector<std::string>{"--no-evidence-filter"}, {"--summary-only"}, {"--plain-template"},
          {"--mode", "tiered"}, {"--threshold", "0.8"}}) {
        std::vector<std::string> args = {"--config", config()};
        args.insert(args.end(), flags.begin(), flags.end());
        const auto out = scratch("out-ablation");
        fs::remove_all(out);
        for (const auto& a : std::vector<std::string>{"code", "--in", records(), "--out", out.string()}) args.push_back(a);
        const auto r = run(args);
        EXPECT_EQ(r.code, 0) << flags.front() << ": " << r.err;
        EXPECT_EQ(json_files(out), 5u);
    }
}

TEST_F(CliToy, ConfigErrors) {
    const auto out = scratch("out-bad");
    auto r = run({"--config", config(), "--threshold", "1.5", "code", "--in", records(), "--out", out.string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("threshold"), std::string::npos);
    EXPECT_FALSE(fs::exists(out));
    EXPECT_EQ(run({"--config", (scratch("none") / "c.json").string(), "code", "--in", records(), "--out",
                   out.string()})
                  .code,
              1);
    EXPECT_NE(run({"--bogus-flag", "code"}).code, 0);
    EXPECT_NE(run({"--mode", "fancy", "code", "--in", "x", "--out", "y"}).code, 0);
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, InvalidCorpusIsDataError) {
    testing_support::TempDir dir;
    std::ofstream(dir.path() / "bad.ndjson") << "{\"record_id\": \"a\", \"sections\": 3}\n";
    EXPECT_EQ(run({"ingest", "--in", (dir.path() / "bad.ndjson").string()}).code, 2);
}
