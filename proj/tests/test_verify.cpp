#include <gtest/gtest.h>

#include <cmath>

#include "evicode/error.hpp"
#include "evicode/rng.hpp"
#include "evicode/verify.hpp"
#include "support.hpp"

using namespace evicode;

namespace {

EvidencePiece piece(std::string text, std::vector<std::string> keywords, std::string location, std::size_t reps,
                    double score = 0.9) {
    EvidencePiece p;
    p.sentence_text = std::move(text);
    p.matched_keywords = std::move(keywords);
    p.location_id = std::move(location);
    p.repetition_count = reps;
    p.score = score;
    return p;
}

LocationRegistry registry() { return LocationRegistry(std::vector<Location>{{"ct", "CT"}, {"chief-complaint", "主诉"}}); }

std::vector<LabeledExample> separable(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<LabeledExample> out;
    for (std::size_t i = 0; i < n; ++i) {
        LabeledExample ex;
        ex.label = static_cast<int>(i % 2);
        for (auto& f : ex.features) f = rng.uniform(0.0, 1.0);
        ex.features[kCoverageAnatomy] = ex.label == 1 ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.4);
        out.push_back(ex);
    }
    return out;
}

}  // namespace

TEST(FormatEvidence, CanonicalLayout) {
    const auto f = format_evidence(piece("脉络膜出血", {"脉络膜", "出血"}, "ct", 2), registry());
    EXPECT_EQ(f.canonical_string, "脉络膜出血∥脉络膜,出血∥CT∥2");
    EXPECT_EQ(parse_formatted_evidence(f.canonical_string), f);
}

TEST(FormatEvidence, PlainCarriesOnlyText) {
    const auto f = format_evidence(piece("a∥b", {"a"}, "ct", 3), registry(), true);
    EXPECT_EQ(f.canonical_string, "a||b");
    EXPECT_TRUE(f.plain);
    const auto back = parse_formatted_evidence(f.canonical_string);
    EXPECT_EQ(back.text, "a∥b");
    EXPECT_TRUE(back.plain);
}

TEST(FormatEvidence, EscapesRoundTrip) {
    const auto f = format_evidence(piece("x\\y|z∥w, q", {"a,b", "c∥d", "e\\"}, "unknown-loc", 12), registry());
    const auto back = parse_formatted_evidence(f.canonical_string);
    EXPECT_EQ(back.text, "x\\y|z∥w, q");
    EXPECT_EQ(back.keywords, (std::vector<std::string>{"a,b", "c∥d", "e\\"}));
    EXPECT_EQ(back.origin, "unknown-loc");
    EXPECT_EQ(back.repetitions, 12u);
}

TEST(FormatEvidence, MalformedStringsRejected) {
    EXPECT_THROW(parse_formatted_evidence("a∥b∥c"), ParseError);
    EXPECT_THROW(parse_formatted_evidence("a∥b∥c∥x1"), ParseError);
    EXPECT_THROW(parse_formatted_evidence("a|b"), ParseError);
    EXPECT_THROW(parse_formatted_evidence("a\\"), ParseError);
}

TEST(Template, LayoutAndOrder) {
    EvidenceSet set;
    set.pieces = {piece("甲", {"甲"}, "ct", 1), piece("乙", {"乙"}, "chief-complaint", 1)};
    const Lexicon lex(std::vector<std::string>{"甲", "乙"});
    const auto t = build_template(set, make_code("A00", "甲乙"), TemplateCaps{}, registry(), lex);
    EXPECT_TRUE(has_template_layout(t.serialized));
    EXPECT_EQ(t.serialized.front(), "[CLS]");
    EXPECT_EQ(t.serialized.back(), "[mask]");
    EXPECT_EQ(t.evidence.size(), 2u);
    EXPECT_EQ(t.evidence[0].text, "甲");
    EXPECT_EQ(t.code_tokens, (std::vector<std::string>{"甲", "乙"}));
    const std::size_t n = t.serialized.size();
    EXPECT_EQ(t.serialized[n - 2], "[soft]");
    EXPECT_EQ(t.serialized[n - 5], "[soft]");
}

TEST(Template, EmptyEvidenceStillValid) {
    const auto t = build_template(EvidenceSet{}, make_code("A00", "霍乱"), TemplateCaps{}, registry(), Lexicon{});
    EXPECT_TRUE(has_template_layout(t.serialized));
    EXPECT_EQ(t.serialized.size(), 1u + 3u + 2u + 2u);
}

TEST(Template, CapsDropWholePieces) {
    EvidenceSet set;
    for (int i = 0; i < 5; ++i) set.pieces.push_back(piece("abcdef", {"a"}, "ct", 1));
    TemplateCaps caps;
    caps.max_pieces = 3;
    caps.max_code_tokens = 2;
    auto t = build_template(set, make_code("A00", "霍乱弧菌"), caps, registry(), Lexicon{});
    EXPECT_EQ(t.evidence.size(), 3u);
    EXPECT_EQ(t.code_tokens.size(), 2u);

    const std::size_t per_piece = t.evidence_tokens[0].size();
    caps.max_pieces = 10;
    caps.max_evidence_tokens = per_piece * 2 + 1;
    t = build_template(set, make_code("A00", "霍乱"), caps, registry(), Lexicon{});
    EXPECT_EQ(t.evidence.size(), 2u);
    EXPECT_TRUE(has_template_layout(t.serialized));
    EXPECT_THROW(build_template(set, make_code("A00", ""), caps, registry(), Lexicon{}), PreconditionError);
}

TEST(Template, LayoutChecker) {
    EXPECT_TRUE(has_template_layout({"[CLS]", "[soft]", "[soft]", "[soft]", "x", "[soft]", "[mask]"}));
    EXPECT_FALSE(has_template_layout({"[CLS]", "[soft]", "[soft]", "[soft]", "[soft]", "[mask]"}));
    EXPECT_FALSE(has_template_layout({"x", "[soft]", "[soft]", "[soft]", "x", "[soft]", "[mask]"}));
    EXPECT_FALSE(has_template_layout({"[CLS]", "[soft]", "[soft]", "x", "[soft]", "[mask]"}));
    EXPECT_FALSE(has_template_layout({"[CLS]", "[mask]", "[soft]", "[soft]", "[soft]", "x", "[soft]", "[mask]"}));
}

TEST(Verbalizer, Words) {
    EXPECT_EQ(Verbalizer::word(1), "yes");
    EXPECT_EQ(Verbalizer::label("no"), 0);
    EXPECT_THROW(Verbalizer::label("maybe"), PreconditionError);
}

TEST(Verdict, ThresholdAndRange) {
    EXPECT_EQ(make_verdict(0.5, 0.5, "v").label, 1);
    EXPECT_EQ(make_verdict(0.49, 0.5, "v").label, 0);
    EXPECT_EQ(make_verdict(0.0, 0.0, "v").label, 1);
    EXPECT_THROW(make_verdict(1.2, 0.5, "v"), VerificationError);
    EXPECT_THROW(make_verdict(std::nan(""), 0.5, "v"), VerificationError);
}

TEST(Features, ValuesOnHandExample) {
    EvidenceSet set;
    set.pieces = {piece("甲", {"甲"}, "ct", 2, 0.8), piece("乙", {"乙"}, "chief-complaint", 1, 0.6)};
    set.covered_keywords = {"甲", "乙"};
    AxisKnowledge axes;
    axes.anatomy = {"甲", "丙"};
    axes.pathology = {"乙"};
    CandidateEntry cand;
    cand.sim = 0.7;
    cand.rank = 4;
    const auto t = build_template(set, make_code("A00", "甲乙"), TemplateCaps{}, registry(), Lexicon{});
    const auto x = extract_features(t, set, axes, cand, 10);
    EXPECT_DOUBLE_EQ(x[kCoverageEtiology], 1.0);
    EXPECT_DOUBLE_EQ(x[kCoverageAnatomy], 0.5);
    EXPECT_DOUBLE_EQ(x[kCoveragePathology], 1.0);
    EXPECT_DOUBLE_EQ(x[kMeanScore], 0.7);
    EXPECT_DOUBLE_EQ(x[kMaxScore], 0.8);
    EXPECT_DOUBLE_EQ(x[kEvidenceFraction], 0.2);
    EXPECT_DOUBLE_EQ(x[kRepetitions], std::log1p(3.0));
    EXPECT_DOUBLE_EQ(x[kCandidateSim], 0.7);
    EXPECT_DOUBLE_EQ(x[kReciprocalRank], 0.25);
    EXPECT_DOUBLE_EQ(x[kObjectiveOrigin], 0.5);

    const auto plain = build_template(set, make_code("A00", "甲乙"), TemplateCaps{}, registry(), Lexicon{}, true);
    const auto xp = extract_features(plain, set, axes, cand, 10);
    EXPECT_DOUBLE_EQ(xp[kRepetitions], 0.0);
    EXPECT_DOUBLE_EQ(xp[kObjectiveOrigin], 0.0);
}

TEST(Training, GradientMatchesFiniteDifference) {
    const auto data = separable(40, 3);
    Rng rng(5);
    FeatureVector w{};
    for (auto& v : w) v = rng.uniform(-1, 1);
    const double b = 0.3;
    FeatureVector gw{};
    double gb = 0;
    logistic_loss(data, w, b, 0.01, &gw, &gb);
    const double h = 1e-6;
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
        FeatureVector wp = w, wm = w;
        wp[i] += h;
        wm[i] -= h;
        const double fd = (logistic_loss(data, wp, b, 0.01) - logistic_loss(data, wm, b, 0.01)) / (2 * h);
        EXPECT_NEAR(gw[i], fd, 1e-4) << feature_names()[i];
    }
    const double fdb = (logistic_loss(data, w, b + h, 0.01) - logistic_loss(data, w, b - h, 0.01)) / (2 * h);
    EXPECT_NEAR(gb, fdb, 1e-4);
}

TEST(Training, SeparatesAndProjects) {
    const auto data = separable(200, 9);
    const auto r = train_verifier(data, TrainOptions{});
    std::size_t correct = 0;
    for (const auto& ex : data) correct += (r.model.predict(ex.features) >= 0.5 ? 1 : 0) == ex.label;
    EXPECT_GE(correct, 190u);
    for (std::size_t i : kNonNegativeFeatures) EXPECT_GE(r.model.weights[i], 0.0);

    auto flipped = data;
    for (auto& ex : flipped) ex.features[kMeanScore] = ex.label == 1 ? 0.0 : 1.0;
    const auto r2 = train_verifier(flipped, TrainOptions{});
    EXPECT_GE(r2.model.weights[kMeanScore], 0.0);
}

TEST(Training, Preconditions) {
    EXPECT_THROW(train_verifier({}), PreconditionError);
    std::vector<LabeledExample> one(3);
    EXPECT_THROW(train_verifier(one), PreconditionError);
    EXPECT_THROW(FeatureVerifierModel{}.predict(FeatureVector{}), VerificationError);
}

TEST(Training, Deterministic) {
    const auto data = separable(50, 2);
    TrainOptions opt;
    opt.epochs = 100;
    EXPECT_EQ(train_verifier(data, opt).model.to_json().dump(), train_verifier(data, opt).model.to_json().dump());
}

TEST(VerifierModel, JsonRoundTrip) {
    const auto r = train_verifier(separable(30, 4), TrainOptions{});
    testing_support::TempDir dir;
    r.model.save(dir.path() / "m.json");
    const auto back = FeatureVerifierModel::load(dir.path() / "m.json");
    EXPECT_EQ(back.weights, r.model.weights);
    EXPECT_EQ(back.bias, r.model.bias);
    auto j = nlohmann::json::parse(r.model.to_json().dump());
    j["weights"].erase(0);
    EXPECT_THROW(FeatureVerifierModel::from_json(j), ValidationError);
    j = nlohmann::json::parse(r.model.to_json().dump());
    j["schema_version"] = 99;
    EXPECT_THROW(FeatureVerifierModel::from_json(j), ValidationError);
}

TEST(ExternalVerifier, ReadsProbability) {
    testing_support::LineServer server([](const std::string& line) {
        const auto j = nlohmann::json::parse(line);
        const bool ok = j["template"].front() == "[CLS]" && j["verbalizer"]["yes"] == "yes";
        return nlohmann::json{{"p_yes", ok ? 0.8 : 0.1}}.dump();
    });
    ExternalVerifier v(server.endpoint(), std::chrono::milliseconds(2000));
    const auto t = build_template(EvidenceSet{}, make_code("A00", "霍乱"), TemplateCaps{}, registry(), Lexicon{});
    const auto verdict = verify(t, EvidenceSet{}, AxisKnowledge{}, CandidateEntry{}, v, 0.5);
    EXPECT_EQ(verdict.label, 1);
    EXPECT_DOUBLE_EQ(verdict.p_yes, 0.8);
}

TEST(ExternalVerifier, BadRepliesAreErrors) {
    const auto t = build_template(EvidenceSet{}, make_code("A00", "霍乱"), TemplateCaps{}, registry(), Lexicon{});
    testing_support::LineServer missing([](const std::string&) { return std::string(R"({"p": 1})"); });
    ExternalVerifier v1(missing.endpoint(), std::chrono::milliseconds(2000));
    EXPECT_THROW(verify(t, EvidenceSet{}, AxisKnowledge{}, CandidateEntry{}, v1), VerificationError);
    testing_support::LineServer range([](const std::string&) { return std::string(R"({"p_yes": -0.5})"); });
    ExternalVerifier v2(range.endpoint(), std::chrono::milliseconds(2000));
    EXPECT_THROW(verify(t, EvidenceSet{}, AxisKnowledge{}, CandidateEntry{}, v2), VerificationError);
    testing_support::LineServer silent([](const std::string&) { return std::string(); });
    ExternalVerifier v3(silent.endpoint(), std::chrono::milliseconds(500));
    EXPECT_THROW(verify(t, EvidenceSet{}, AxisKnowledge{}, CandidateEntry{}, v3), VerificationError);
}
