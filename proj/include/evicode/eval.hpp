#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evicode/corpus.hpp"
#include "evicode/pipeline.hpp"
#include "json.hpp"

namespace evicode {

struct CodeCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

struct MetricReport {
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double accuracy = 0.0;
    double p_at_5 = 0.0;
    std::size_t n_diagnoses = 0;
    std::map<std::string, CodeCounts> per_code;
};

/// One labeled diagnosis: its gold code and the ranked recommended codes.
struct DiagnosisPrediction {
    std::string gold;
    std::vector<std::string> ranked;
};

MetricReport evaluate(const std::vector<DiagnosisPrediction>& predictions);

/// Pairs every gold-labeled diagnosis in `golds` with its result. Throws
/// DataMismatch when a record or diagnosis has no result, or a gold code is
/// not in `code_table`.
MetricReport evaluate(const std::vector<CodingResult>& results, const std::vector<EmrDocument>& golds,
                      const std::vector<IcdCode>& code_table);

nlohmann::ordered_json to_json(const MetricReport& report);
std::string render_table(const MetricReport& report, const std::string& title = "");

struct Summary {
    std::size_t count = 0;
    double mean = 0.0;
    double variance = 0.0;
    double median = 0.0;
};

/// Population variance, lower median. Throws PreconditionError when empty.
Summary summarize(std::vector<double> values);

struct CorpusStats {
    std::size_t records = 0;
    Summary diagnosis_tokens;
    Summary discharge_summary_tokens;
    Summary candidates_per_diagnosis;
    Summary evidence_per_candidate;
    Summary tokens_per_evidence;
};

/// Fields without any observations are left at count 0. `results` may be
/// empty, in which case only the text statistics are filled.
CorpusStats corpus_stats(const std::vector<EmrDocument>& corpus, const std::vector<CodingResult>& results,
                         const Lexicon& lexicon);

nlohmann::ordered_json to_json(const CorpusStats& stats);
std::string render_table(const CorpusStats& stats);

struct CorpusSplit {
    std::vector<EmrDocument> train;
    std::vector<EmrDocument> dev;
    std::vector<EmrDocument> test;
};

CorpusSplit split_corpus(std::vector<EmrDocument> corpus, const std::array<double, 3>& ratios, std::uint64_t seed);

struct VerifierDataset {
    std::vector<LabeledExample> examples;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    /// Gold codes missing from their candidate set (or unparseable).
    std::size_t misses = 0;
};

VerifierDataset build_verifier_dataset(const std::vector<EmrDocument>& corpus, const Engine& engine,
                                       std::size_t neg_per_pos = 5);

}  // namespace evicode
