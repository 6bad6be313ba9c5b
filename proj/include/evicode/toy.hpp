#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "evicode/pipeline.hpp"
#include "json.hpp"

namespace evicode::toy {

/// A small synthetic code table, knowledge assets and gold-labeled records.
/// Evidence for every gold code is planted across several sections; the
/// discharge summary only ever mentions the anatomical site.
struct Bundle {
    std::vector<IcdCode> codes;
    AxisTable axis_table;
    AxisLexicons axis_lexicons;
    nlohmann::ordered_json axis_lexicons_json;
    SynonymLexicon synonyms;
    nlohmann::ordered_json synonyms_json;
    nlohmann::ordered_json prior_json;
    EmbeddingTable embeddings;
    std::vector<std::string> lexicon_words;
    std::vector<nlohmann::ordered_json> records;
};

inline constexpr std::size_t kToyCodes = 200;
inline constexpr std::size_t kToyRecords = 5;

Bundle make_bundle(std::uint64_t seed = 7);

/// In-memory assets for a bundle, without a verifier model.
Assets to_assets(const Bundle& bundle);

/// Default config used for the toy corpus (relative asset file names).
Config toy_config();

/// (gold code, perturbed diagnosis text) pairs: one- and two-character
/// edits and synonym swaps of every code description.
std::vector<std::pair<std::string, std::string>> perturbed_diagnoses(const Bundle& bundle, std::uint64_t seed = 11);

/// Trains the builtin verifier on the bundle's records with every
/// candidate as a negative. Throws if it does not separate them.
FeatureVerifierModel train_toy_verifier(const Bundle& bundle);

struct Written {
    std::filesystem::path config;
    std::filesystem::path records;
};

/// Writes assets, records/, a trained verifier and config.json under `dir`.
Written write(const std::filesystem::path& dir, std::uint64_t seed = 7);

}  // namespace evicode::toy
