#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"

namespace evicode {

class LocationRegistry;

/// Reserved location for sections whose id is not in the registry.
inline constexpr std::string_view kOtherLocation = "other";

/// Word list driving greedy longest-match segmentation.
class Lexicon {
public:
    Lexicon() = default;
    explicit Lexicon(const std::vector<std::string>& words);

    /// Words containing whitespace are ignored.
    void add(std::string_view word);
    void merge(const Lexicon& other);

    bool contains(std::u32string_view word) const { return words_.contains(std::u32string(word)); }
    std::size_t size() const noexcept { return words_.size(); }
    std::size_t max_length() const noexcept { return max_length_; }

    static Lexicon load(const std::filesystem::path& path);

private:
    std::unordered_set<std::u32string> words_;
    std::size_t max_length_ = 0;
};

/// Greedy longest match against `lexicon`, scanning left to right. Characters
/// not covered by a lexicon word become single-character tokens, except ASCII
/// alphanumeric runs which stay whole. Whitespace is dropped.
std::vector<std::string> tokenize(std::string_view text, const Lexicon& lexicon);

struct Sentence {
    std::size_t index = 0;
    std::string text;

    std::vector<std::string> tokens(const Lexicon& lexicon) const { return tokenize(text, lexicon); }
};

struct Section {
    std::string location_id;
    std::string title;
    std::vector<Sentence> sentences;
};

struct Diagnosis {
    std::size_t index = 0;
    std::string text;
};

struct EmrDocument {
    std::string record_id;
    std::vector<Section> sections;
    std::vector<Diagnosis> diagnoses;
    std::map<std::size_t, std::string> gold_codes;
    /// Sections whose location id was not in the registry and became "other".
    std::size_t unknown_locations = 0;

    const Section* section(std::string_view location_id) const;
};

/// Splits on 。！？；!?; and newline. Terminators stay with the preceding
/// sentence, surrounding whitespace is trimmed, and fragments with no content
/// besides terminators and whitespace are dropped.
std::vector<Sentence> split_sentences(std::string_view text);

EmrDocument ingest_document(std::string_view raw, const LocationRegistry& registry);
EmrDocument ingest_record(const nlohmann::json& record, const LocationRegistry& registry);

/// Reads a directory of `*.json` records (sorted by file name) or a
/// newline-delimited stream file.
std::vector<EmrDocument> load_corpus(const std::filesystem::path& path, const LocationRegistry& registry);

/// Inverse of ingestion: sentences of a section are joined back into `text`.
nlohmann::ordered_json to_json(const EmrDocument& doc);

}  // namespace evicode
