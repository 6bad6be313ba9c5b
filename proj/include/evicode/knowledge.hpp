#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "evicode/corpus.hpp"
#include "json.hpp"

namespace evicode {

struct IcdCode {
    std::string code;
    std::string description;
    std::string group;

    friend bool operator==(const IcdCode&, const IcdCode&) = default;
};

/// Letter, two digits, then optionally "." and 1-4 alphanumerics.
bool is_valid_code(std::string_view code) noexcept;

/// Validates `code` and derives its three-character group.
IcdCode make_code(std::string code, std::string description);

enum class Axis { Etiology, Anatomy, Pathology, Manifestation };

inline constexpr std::array<Axis, 4> kAllAxes = {Axis::Etiology, Axis::Anatomy, Axis::Pathology,
                                                 Axis::Manifestation};

std::string_view axis_name(Axis axis) noexcept;
std::optional<Axis> axis_from_name(std::string_view name) noexcept;

struct AxisKnowledge {
    std::vector<std::string> etiology;
    std::vector<std::string> anatomy;
    std::vector<std::string> pathology;
    std::vector<std::string> manifestation;

    const std::vector<std::string>& operator[](Axis axis) const;
    std::vector<std::string>& operator[](Axis axis);

    bool empty() const noexcept;
    /// Union of the four lists in axis order, without duplicates.
    std::vector<std::string> keywords() const;

    friend bool operator==(const AxisKnowledge&, const AxisKnowledge&) = default;
};

using AxisTable = std::unordered_map<std::string, AxisKnowledge>;

/// One keyword lexicon per axis, plus the order ambiguous tokens are assigned in.
struct AxisLexicons {
    std::map<Axis, Lexicon> by_axis;
    std::array<Axis, 4> priority = {Axis::Anatomy, Axis::Etiology, Axis::Pathology, Axis::Manifestation};

    /// All axis words, for segmenting descriptions before assignment.
    Lexicon combined() const;

    void set(Axis axis, Lexicon lexicon);
    const Lexicon& segmenter() const noexcept { return segmenter_; }

private:
    Lexicon segmenter_;
};

class SynonymLexicon {
public:
    SynonymLexicon() = default;
    /// Self-mappings are discarded.
    void add(const std::string& keyword, const std::string& synonym);
    const std::vector<std::string>& lookup(const std::string& keyword) const;
    std::size_t size() const noexcept { return entries_.size(); }
    const std::unordered_map<std::string, std::vector<std::string>>& entries() const noexcept { return entries_; }

    static SynonymLexicon from_json(const nlohmann::json& j);

private:
    std::unordered_map<std::string, std::vector<std::string>> entries_;
};

struct Location {
    std::string id;
    std::string name;
};

class LocationRegistry {
public:
    LocationRegistry() = default;
    explicit LocationRegistry(std::vector<Location> locations);

    bool contains(std::string_view id) const;
    std::optional<std::size_t> index_of(std::string_view id) const;
    /// Display name; ids outside the registry (including "other") map to themselves.
    std::string name_of(std::string_view id) const;
    const std::vector<Location>& locations() const noexcept { return locations_; }
    std::vector<std::string> ids() const;
    std::size_t size() const noexcept { return locations_.size(); }

    static LocationRegistry from_json(const nlohmann::json& j);
    /// The 88 canonical sections of a Chinese inpatient record.
    static LocationRegistry standard();

private:
    std::vector<Location> locations_;
    std::unordered_map<std::string, std::size_t> index_;
};

class PriorLocationTable {
public:
    PriorLocationTable() = default;

    void add_range(std::string_view group_start, std::string_view group_end, const std::vector<std::string>& locations,
                   const LocationRegistry& registry);
    const std::vector<std::string>* find(std::string_view group) const;
    std::size_t size() const noexcept { return rows_.size(); }

    static PriorLocationTable from_json(const nlohmann::json& j, const LocationRegistry& registry);
    /// Illustrative excerpt (infectious disease chapter only). Real deployments
    /// supply the full table as an asset.
    static PriorLocationTable illustrative(const LocationRegistry& registry);

private:
    std::unordered_map<std::string, std::vector<std::string>> rows_;
};

/// Rows of `code<TAB>description` (a comma also separates when no tab is
/// present). A first row reading `code ... description` is treated as a header.
std::vector<IcdCode> load_code_table(std::istream& in);
std::vector<IcdCode> load_code_table(const std::filesystem::path& path);

AxisTable axis_table_from_json(const nlohmann::json& j);
AxisLexicons axis_lexicons_from_json(const nlohmann::json& j);

/// Curated entry wins; otherwise the description is segmented and each token
/// goes to the first axis (by priority) whose lexicon holds it.
/// Throws UnparseableCode when nothing is assigned.
AxisKnowledge parse_axes(const IcdCode& code, const AxisTable* axis_table, const AxisLexicons* axis_lexicons);

/// `keywords` followed by their synonyms, first occurrence kept.
std::vector<std::string> expand_synonyms(const std::vector<std::string>& keywords, const SynonymLexicon& lexicon);

std::vector<std::string> locations_for(const IcdCode& code, const PriorLocationTable& table,
                                       const LocationRegistry& registry);

nlohmann::ordered_json to_json(const AxisKnowledge& axes);
AxisKnowledge axis_knowledge_from_json(const nlohmann::json& j);

}  // namespace evicode
