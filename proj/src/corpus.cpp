#include "evicode/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "evicode/error.hpp"
#include "evicode/knowledge.hpp"
#include "evicode/utf8.hpp"

namespace evicode {

Lexicon::Lexicon(const std::vector<std::string>& words) {
    for (const auto& w : words) add(w);
}

void Lexicon::add(std::string_view word) {
    std::u32string cps = utf8::decode(word);
    if (cps.empty()) return;
    if (std::any_of(cps.begin(), cps.end(), utf8::is_space)) return;
    max_length_ = std::max(max_length_, cps.size());
    words_.insert(std::move(cps));
}

void Lexicon::merge(const Lexicon& other) {
    for (const auto& w : other.words_) {
        max_length_ = std::max(max_length_, w.size());
        words_.insert(w);
    }
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open lexicon " + path.string());
    Lexicon lex;
    std::string line;
    while (std::getline(in, line)) {
        std::string word = utf8::trim(line);
        if (!word.empty() && word[0] != '#') lex.add(word);
    }
    return lex;
}

std::vector<std::string> tokenize(std::string_view text, const Lexicon& lexicon) {
    const std::u32string cps = utf8::decode(text);
    std::vector<std::string> tokens;
    std::size_t i = 0;
    const std::size_t n = cps.size();
    const std::u32string_view view(cps);
    while (i < n) {
        if (utf8::is_space(cps[i])) {
            ++i;
            continue;
        }
        std::size_t matched = 0;
        const std::size_t longest = std::min(lexicon.max_length(), n - i);
        for (std::size_t len = longest; len >= 1; --len) {
            if (lexicon.contains(view.substr(i, len))) {
                matched = len;
                break;
            }
        }
        if (matched == 0) {
            if (utf8::is_ascii_alnum(cps[i])) {
                std::size_t j = i;
                while (j < n && utf8::is_ascii_alnum(cps[j])) ++j;
                matched = j - i;
            } else {
                matched = 1;
            }
        }
        tokens.push_back(utf8::encode(view.substr(i, matched)));
        i += matched;
    }
    return tokens;
}

namespace {

bool is_terminator(char32_t cp) {
    switch (cp) {
        case U'。':  // 。
        case U'！':  // ！
        case U'？':  // ？
        case U'；':  // ；
        case U'!':
        case U'?':
        case U';':
        case U'\n':
            return true;
        default:
            return false;
    }
}

void push_fragment(std::u32string_view fragment, std::vector<Sentence>& out) {
    const bool has_content = std::any_of(fragment.begin(), fragment.end(),
                                         [](char32_t c) { return !utf8::is_space(c) && !is_terminator(c); });
    if (!has_content) return;
    std::size_t b = 0;
    std::size_t e = fragment.size();
    while (b < e && utf8::is_space(fragment[b])) ++b;
    while (e > b && utf8::is_space(fragment[e - 1])) --e;
    out.push_back(Sentence{out.size(), utf8::encode(fragment.substr(b, e - b))});
}

std::string require_string(const nlohmann::json& obj, const char* key, const std::string& context) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
        throw ValidationError(context + ": field '" + key + "' must be a string");
    }
    return it->get<std::string>();
}

}  // namespace

std::vector<Sentence> split_sentences(std::string_view text) {
    const std::u32string cps = utf8::decode(text);
    std::vector<Sentence> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i < cps.size(); ++i) {
        if (is_terminator(cps[i])) {
            push_fragment(std::u32string_view(cps).substr(start, i + 1 - start), out);
            start = i + 1;
        }
    }
    if (start < cps.size()) push_fragment(std::u32string_view(cps).substr(start), out);
    return out;
}

const Section* EmrDocument::section(std::string_view location_id) const {
    for (const auto& s : sections) {
        if (s.location_id == location_id) return &s;
    }
    return nullptr;
}

EmrDocument ingest_document(std::string_view raw, const LocationRegistry& registry) {
    nlohmann::json record;
    try {
        record = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("malformed record: ") + e.what(), e.byte);
    }
    return ingest_record(record, registry);
}

EmrDocument ingest_record(const nlohmann::json& record, const LocationRegistry& registry) {
    if (!record.is_object()) throw ValidationError("record must be an object");
    EmrDocument doc;
    doc.record_id = require_string(record, "record_id", "record");
    if (doc.record_id.empty()) throw ValidationError("record_id must be nonempty");
    const std::string ctx = "record " + doc.record_id;

    std::set<std::string> seen;
    if (auto it = record.find("sections"); it != record.end()) {
        if (!it->is_array()) throw ValidationError(ctx + ": 'sections' must be an array");
        for (const auto& raw_section : *it) {
            if (!raw_section.is_object()) throw ValidationError(ctx + ": section must be an object");
            Section section;
            section.location_id = require_string(raw_section, "location_id", ctx);
            section.title = raw_section.value("title", std::string{});
            const std::string text = require_string(raw_section, "text", ctx);
            if (section.location_id != kOtherLocation && !registry.contains(section.location_id)) {
                section.location_id = std::string(kOtherLocation);
                ++doc.unknown_locations;
            }
            if (section.location_id == kOtherLocation) {
                // Several unknown sections may collapse into "other"; merge them.
                auto existing = std::find_if(doc.sections.begin(), doc.sections.end(),
                                             [](const Section& s) { return s.location_id == kOtherLocation; });
                if (existing != doc.sections.end()) {
                    for (auto& s : split_sentences(text)) {
                        s.index = existing->sentences.size();
                        existing->sentences.push_back(std::move(s));
                    }
                    continue;
                }
            } else if (!seen.insert(section.location_id).second) {
                throw ValidationError(ctx + ": duplicate location_id '" + section.location_id + "'");
            }
            section.sentences = split_sentences(text);
            doc.sections.push_back(std::move(section));
        }
    }

    if (auto it = record.find("diagnoses"); it != record.end()) {
        if (!it->is_array()) throw ValidationError(ctx + ": 'diagnoses' must be an array");
        for (const auto& d : *it) {
            if (!d.is_string()) throw ValidationError(ctx + ": diagnosis must be a string");
            std::string text = utf8::trim(d.get<std::string>());
            if (text.empty()) throw ValidationError(ctx + ": empty diagnosis text");
            doc.diagnoses.push_back(Diagnosis{doc.diagnoses.size(), std::move(text)});
        }
    }

    if (auto it = record.find("gold_codes"); it != record.end() && !it->is_null()) {
        if (!it->is_object()) throw ValidationError(ctx + ": 'gold_codes' must be an object");
        for (const auto& [key, value] : it->items()) {
            std::size_t idx = 0;
            std::size_t consumed = 0;
            try {
                idx = std::stoul(key, &consumed);
            } catch (const std::exception&) {
                consumed = 0;
            }
            if (consumed != key.size() || key.empty()) {
                throw ValidationError(ctx + ": gold_codes key '" + key + "' is not an index");
            }
            if (idx >= doc.diagnoses.size()) {
                throw ValidationError(ctx + ": gold_codes key " + key + " has no diagnosis");
            }
            if (!value.is_string()) throw ValidationError(ctx + ": gold code must be a string");
            doc.gold_codes[idx] = value.get<std::string>();
        }
    }
    return doc;
}

std::vector<EmrDocument> load_corpus(const std::filesystem::path& path, const LocationRegistry& registry) {
    namespace fs = std::filesystem;
    std::vector<EmrDocument> docs;
    auto read_file = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw ConfigError("cannot open " + p.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(path)) {
            if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            try {
                docs.push_back(ingest_document(read_file(f), registry));
            } catch (const Error& e) {
                throw ValidationError(f.filename().string() + ": " + e.what());
            }
        }
        return docs;
    }
    if (!fs::exists(path)) throw ConfigError("corpus path does not exist: " + path.string());
    std::istringstream stream(read_file(path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(stream, line)) {
        ++line_no;
        if (utf8::trim(line).empty()) continue;
        try {
            docs.push_back(ingest_document(line, registry));
        } catch (const Error& e) {
            throw ValidationError(path.filename().string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return docs;
}

nlohmann::ordered_json to_json(const EmrDocument& doc) {
    nlohmann::ordered_json out;
    out["record_id"] = doc.record_id;
    auto sections = nlohmann::ordered_json::array();
    for (const auto& s : doc.sections) {
        std::string text;
        for (const auto& sentence : s.sentences) {
            if (!text.empty()) text += "\n";
            text += sentence.text;
        }
        sections.push_back({{"location_id", s.location_id}, {"title", s.title}, {"text", text}});
    }
    out["sections"] = std::move(sections);
    auto diagnoses = nlohmann::ordered_json::array();
    for (const auto& d : doc.diagnoses) diagnoses.push_back(d.text);
    out["diagnoses"] = std::move(diagnoses);
    if (!doc.gold_codes.empty()) {
        nlohmann::ordered_json gold = nlohmann::ordered_json::object();
        for (const auto& [idx, code] : doc.gold_codes) gold[std::to_string(idx)] = code;
        out["gold_codes"] = std::move(gold);
    }
    return out;
}

}  // namespace evicode
