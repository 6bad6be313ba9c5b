#include "evicode/knowledge.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <set>
#include <utility>

#include "evicode/error.hpp"
#include "evicode/utf8.hpp"

namespace evicode {

bool is_valid_code(std::string_view code) noexcept {
    auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
    auto is_alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
    if (code.size() < 3) return false;
    if (code[0] < 'A' || code[0] > 'Z') return false;
    if (!is_digit(code[1]) || !is_digit(code[2])) return false;
    if (code.size() == 3) return true;
    if (code[3] != '.') return false;
    const auto tail = code.substr(4);
    return !tail.empty() && tail.size() <= 4 && std::all_of(tail.begin(), tail.end(), is_alnum);
}

IcdCode make_code(std::string code, std::string description) {
    if (!is_valid_code(code)) throw ValidationError("code '" + code + "' does not match the ICD code pattern");
    IcdCode out;
    out.group = code.substr(0, 3);
    out.code = std::move(code);
    out.description = std::move(description);
    return out;
}

std::string_view axis_name(Axis axis) noexcept {
    switch (axis) {
        case Axis::Etiology:
            return "etiology";
        case Axis::Anatomy:
            return "anatomy";
        case Axis::Pathology:
            return "pathology";
        case Axis::Manifestation:
            return "manifestation";
    }
    return "";
}

std::optional<Axis> axis_from_name(std::string_view name) noexcept {
    for (Axis a : kAllAxes) {
        if (axis_name(a) == name) return a;
    }
    return std::nullopt;
}

const std::vector<std::string>& AxisKnowledge::operator[](Axis axis) const {
    switch (axis) {
        case Axis::Etiology:
            return etiology;
        case Axis::Anatomy:
            return anatomy;
        case Axis::Pathology:
            return pathology;
        case Axis::Manifestation:
            break;
    }
    return manifestation;
}

std::vector<std::string>& AxisKnowledge::operator[](Axis axis) {
    return const_cast<std::vector<std::string>&>(std::as_const(*this)[axis]);
}

bool AxisKnowledge::empty() const noexcept {
    return etiology.empty() && anatomy.empty() && pathology.empty() && manifestation.empty();
}

std::vector<std::string> AxisKnowledge::keywords() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (Axis a : kAllAxes) {
        for (const auto& k : (*this)[a]) {
            if (seen.insert(k).second) out.push_back(k);
        }
    }
    return out;
}

Lexicon AxisLexicons::combined() const {
    Lexicon out;
    for (const auto& [axis, lex] : by_axis) out.merge(lex);
    return out;
}

void AxisLexicons::set(Axis axis, Lexicon lexicon) {
    by_axis[axis] = std::move(lexicon);
    segmenter_ = combined();
}

void SynonymLexicon::add(const std::string& keyword, const std::string& synonym) {
    if (keyword.empty() || synonym.empty() || keyword == synonym) return;
    auto& list = entries_[keyword];
    if (std::find(list.begin(), list.end(), synonym) == list.end()) list.push_back(synonym);
}

const std::vector<std::string>& SynonymLexicon::lookup(const std::string& keyword) const {
    static const std::vector<std::string> kEmpty;
    auto it = entries_.find(keyword);
    return it == entries_.end() ? kEmpty : it->second;
}

SynonymLexicon SynonymLexicon::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("synonym lexicon must be an object");
    SynonymLexicon lex;
    for (const auto& [key, values] : j.items()) {
        if (!values.is_array()) throw ValidationError("synonyms of '" + key + "' must be an array");
        for (const auto& v : values) lex.add(key, v.get<std::string>());
    }
    return lex;
}

LocationRegistry::LocationRegistry(std::vector<Location> locations) : locations_(std::move(locations)) {
    if (locations_.empty()) throw ValidationError("location registry is empty");
    for (std::size_t i = 0; i < locations_.size(); ++i) {
        const auto& id = locations_[i].id;
        if (id.empty()) throw ValidationError("location id must be nonempty");
        if (id == kOtherLocation) throw ValidationError("location id 'other' is reserved");
        if (!index_.emplace(id, i).second) throw ValidationError("duplicate location id '" + id + "'");
    }
}

bool LocationRegistry::contains(std::string_view id) const { return index_.contains(std::string(id)); }

std::optional<std::size_t> LocationRegistry::index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::string LocationRegistry::name_of(std::string_view id) const {
    auto idx = index_of(id);
    return idx ? locations_[*idx].name : std::string(id);
}

std::vector<std::string> LocationRegistry::ids() const {
    std::vector<std::string> out;
    out.reserve(locations_.size());
    for (const auto& l : locations_) out.push_back(l.id);
    return out;
}

LocationRegistry LocationRegistry::from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw ValidationError("location registry must be an array");
    std::vector<Location> locs;
    for (const auto& row : j) locs.push_back(Location{row.at("id").get<std::string>(), row.value("name", std::string{})});
    for (auto& l : locs) {
        if (l.name.empty()) l.name = l.id;
    }
    return LocationRegistry(std::move(locs));
}

LocationRegistry LocationRegistry::standard() {
    // Ordered roughly as sections appear in an inpatient record.
    return LocationRegistry({
        {"chief-complaint", "主诉"},
        {"present-illness", "现病史"},
        {"past-history", "既往史"},
        {"personal-history", "个人史"},
        {"marital-history", "婚育史"},
        {"menstrual-history", "月经史"},
        {"family-history", "家族史"},
        {"allergy-history", "过敏史"},
        {"surgical-history", "手术史"},
        {"trauma-history", "外伤史"},
        {"transfusion-history", "输血史"},
        {"vaccination-infectious-history", "预防接种及传染病史"},
        {"epidemic-exposure-history", "疫区接触史"},
        {"occupation-conditions", "职业及工作条件"},
        {"medication-history", "用药史"},
        {"smoking-drinking-history", "烟酒史"},
        {"symptom-presentation", "症状表现"},
        {"vital-signs", "生命体征"},
        {"general-examination", "一般查体"},
        {"skin-mucosa-examination", "皮肤黏膜检查"},
        {"lymph-node-examination", "淋巴结检查"},
        {"head-face-examination", "头面部检查"},
        {"eye-examination", "眼部检查"},
        {"fundus-examination", "眼底检查"},
        {"ear-examination", "耳部检查"},
        {"nose-examination", "鼻部检查"},
        {"oral-pharynx-examination", "口咽检查"},
        {"neck-examination", "颈部检查"},
        {"thyroid-examination", "甲状腺检查"},
        {"chest-examination", "胸部检查"},
        {"lung-examination", "肺部检查"},
        {"heart-examination", "心脏检查"},
        {"breast-examination", "乳腺检查"},
        {"abdominal-examination", "腹部检查"},
        {"liver-spleen-examination", "肝脾检查"},
        {"kidney-examination", "肾区检查"},
        {"spine-examination", "脊柱检查"},
        {"limb-examination", "四肢检查"},
        {"joint-examination", "关节检查"},
        {"neurological-reflex-examination", "神经反射检查"},
        {"external-genital-examination", "外生殖器检查"},
        {"anorectal-examination", "肛门直肠检查"},
        {"gynecological-examination", "妇科检查"},
        {"specialist-examination", "专科检查"},
        {"examination-results", "检查及结果"},
        {"testing-results", "检验及结果"},
        {"blood-routine", "血常规"},
        {"urine-routine", "尿常规"},
        {"stool-routine", "粪便常规"},
        {"biochemistry", "生化检查"},
        {"coagulation", "凝血功能"},
        {"immunology", "免疫学检查"},
        {"tumor-markers", "肿瘤标志物"},
        {"microbiology", "病原学检查"},
        {"blood-gas", "血气分析"},
        {"electrocardiogram", "心电图"},
        {"echocardiography", "超声心动图"},
        {"ultrasound", "超声检查"},
        {"x-ray", "X线检查"},
        {"ct", "CT检查"},
        {"mri", "磁共振检查"},
        {"endoscopy", "内镜检查"},
        {"pathology-report", "病理报告"},
        {"angiography", "血管造影"},
        {"pulmonary-function", "肺功能检查"},
        {"electroencephalogram", "脑电图"},
        {"electromyography", "肌电图"},
        {"bone-marrow", "骨髓检查"},
        {"genetic-testing", "基因检测"},
        {"admission-diagnosis", "入院诊断"},
        {"preliminary-diagnosis", "初步诊断"},
        {"diagnostic-basis", "诊断依据"},
        {"differential-diagnosis", "鉴别诊断"},
        {"treatment-plan", "诊疗计划"},
        {"progress-notes", "病程记录"},
        {"ward-round-records", "查房记录"},
        {"consultation-records", "会诊记录"},
        {"operation-records", "手术记录"},
        {"anesthesia-records", "麻醉记录"},
        {"nursing-records", "护理记录"},
        {"medical-orders", "医嘱"},
        {"transfer-records", "转科记录"},
        {"critical-care-records", "重症监护记录"},
        {"rescue-records", "抢救记录"},
        {"discharge-summary", "出院小结"},
        {"discharge-diagnosis", "出院诊断"},
        {"discharge-orders", "出院医嘱"},
        {"death-records", "死亡记录"},
    });
}

namespace {

struct GroupKey {
    char letter;
    int number;
};

GroupKey parse_group(std::string_view group) {
    if (group.size() != 3 || group[0] < 'A' || group[0] > 'Z' || !std::isdigit(static_cast<unsigned char>(group[1])) ||
        !std::isdigit(static_cast<unsigned char>(group[2]))) {
        throw ValidationError("invalid three-character group '" + std::string(group) + "'");
    }
    return {group[0], (group[1] - '0') * 10 + (group[2] - '0')};
}

std::string format_group(char letter, int number) {
    std::string out(1, letter);
    out += static_cast<char>('0' + number / 10);
    out += static_cast<char>('0' + number % 10);
    return out;
}

}  // namespace

void PriorLocationTable::add_range(std::string_view group_start, std::string_view group_end,
                                   const std::vector<std::string>& locations, const LocationRegistry& registry) {
    const GroupKey lo = parse_group(group_start);
    const GroupKey hi = parse_group(group_end);
    if (lo.letter != hi.letter || lo.number > hi.number) {
        throw ValidationError("invalid group range " + std::string(group_start) + "-" + std::string(group_end));
    }
    if (locations.empty()) throw ValidationError("prior row " + std::string(group_start) + " lists no locations");
    for (const auto& loc : locations) {
        if (!registry.contains(loc)) throw ValidationError("prior table location '" + loc + "' is not in the registry");
    }
    for (int n = lo.number; n <= hi.number; ++n) rows_[format_group(lo.letter, n)] = locations;
}

const std::vector<std::string>* PriorLocationTable::find(std::string_view group) const {
    auto it = rows_.find(std::string(group));
    return it == rows_.end() ? nullptr : &it->second;
}

PriorLocationTable PriorLocationTable::from_json(const nlohmann::json& j, const LocationRegistry& registry) {
    if (!j.is_array()) throw ValidationError("prior table must be an array");
    PriorLocationTable table;
    for (const auto& row : j) {
        const auto start = row.at("group_start").get<std::string>();
        const auto end = row.value("group_end", start);
        table.add_range(start, end, row.at("locations").get<std::vector<std::string>>(), registry);
    }
    return table;
}

PriorLocationTable PriorLocationTable::illustrative(const LocationRegistry& registry) {
    PriorLocationTable t;
    t.add_range("A00", "A09", {"testing-results", "symptom-presentation", "epidemic-exposure-history"}, registry);
    t.add_range("A15", "A19",
                {"symptom-presentation", "examination-results", "chest-examination", "vaccination-infectious-history"},
                registry);
    t.add_range("A20", "A28", {"testing-results", "occupation-conditions"}, registry);
    t.add_range("A30", "A49", {"skin-mucosa-examination", "testing-results", "neurological-reflex-examination"},
                registry);
    t.add_range("A50", "A64", {"skin-mucosa-examination", "external-genital-examination", "testing-results"},
                registry);
    t.add_range("A65", "A69", {"skin-mucosa-examination", "testing-results", "epidemic-exposure-history"}, registry);
    t.add_range("A70", "A74", {"chest-examination", "head-face-examination", "testing-results"}, registry);
    t.add_range("A75", "A79", {"testing-results", "epidemic-exposure-history"}, registry);
    return t;
}

namespace {

std::vector<std::string> split_row(const std::string& line) {
    auto pos = line.find('\t');
    if (pos == std::string::npos) pos = line.find(',');
    if (pos == std::string::npos) return {line};
    return {line.substr(0, pos), line.substr(pos + 1)};
}

std::string lower_ascii(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace

std::vector<IcdCode> load_code_table(std::istream& in) {
    std::vector<IcdCode> codes;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (utf8::trim(line).empty()) continue;
        auto cols = split_row(line);
        if (cols.size() < 2) {
            throw ValidationError("code table line " + std::to_string(line_no) + ": expected code and description");
        }
        std::string code = utf8::trim(cols[0]);
        std::string description = utf8::trim(cols[1]);
        if (codes.empty() && seen.empty() && lower_ascii(code) == "code") continue;
        if (!is_valid_code(code)) {
            throw ValidationError("code table line " + std::to_string(line_no) + ": code '" + code +
                                  "' does not match the ICD code pattern");
        }
        if (description.empty()) {
            throw ValidationError("code table line " + std::to_string(line_no) + ": empty description");
        }
        if (!seen.insert(code).second) throw ValidationError("duplicate code '" + code + "' in code table");
        codes.push_back(make_code(std::move(code), std::move(description)));
    }
    return codes;
}

std::vector<IcdCode> load_code_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open code table " + path.string());
    return load_code_table(in);
}

AxisKnowledge axis_knowledge_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("axis entry must be an object");
    AxisKnowledge axes;
    for (Axis a : kAllAxes) {
        auto it = j.find(std::string(axis_name(a)));
        if (it == j.end()) continue;
        for (const auto& k : *it) {
            auto word = k.get<std::string>();
            if (word.empty()) throw ValidationError("empty axis keyword");
            axes[a].push_back(std::move(word));
        }
    }
    return axes;
}

nlohmann::ordered_json to_json(const AxisKnowledge& axes) {
    nlohmann::ordered_json out;
    for (Axis a : kAllAxes) out[std::string(axis_name(a))] = axes[a];
    return out;
}

AxisTable axis_table_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("axis table must be an object");
    AxisTable table;
    for (const auto& [code, entry] : j.items()) {
        if (!is_valid_code(code)) throw ValidationError("axis table code '" + code + "' is invalid");
        table.emplace(code, axis_knowledge_from_json(entry));
    }
    return table;
}

AxisLexicons axis_lexicons_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("axis lexicons must be an object");
    AxisLexicons out;
    for (const auto& [name, words] : j.items()) {
        if (name == "priority") {
            const auto names = words.get<std::vector<std::string>>();
            if (names.size() != 4) throw ValidationError("axis priority must list all four axes");
            std::set<Axis> used;
            for (std::size_t i = 0; i < 4; ++i) {
                auto a = axis_from_name(names[i]);
                if (!a || !used.insert(*a).second) throw ValidationError("bad axis priority entry '" + names[i] + "'");
                out.priority[i] = *a;
            }
            continue;
        }
        auto axis = axis_from_name(name);
        if (!axis) throw ValidationError("unknown axis '" + name + "'");
        out.set(*axis, Lexicon(words.get<std::vector<std::string>>()));
    }
    return out;
}

AxisKnowledge parse_axes(const IcdCode& code, const AxisTable* axis_table, const AxisLexicons* axis_lexicons) {
    if (axis_table == nullptr && axis_lexicons == nullptr) {
        throw PreconditionError("parse_axes needs an axis table or axis lexicons");
    }
    if (axis_table != nullptr) {
        if (auto it = axis_table->find(code.code); it != axis_table->end()) {
            if (it->second.empty()) throw UnparseableCode("code " + code.code + " has an empty curated entry");
            return it->second;
        }
    }
    AxisKnowledge axes;
    if (axis_lexicons != nullptr) {
        const Lexicon rebuilt = axis_lexicons->segmenter().size() == 0 ? axis_lexicons->combined() : Lexicon{};
        const Lexicon& segmenter = axis_lexicons->segmenter().size() == 0 ? rebuilt : axis_lexicons->segmenter();
        for (const auto& token : tokenize(code.description, segmenter)) {
            const std::u32string cps = utf8::decode(token);
            for (Axis a : axis_lexicons->priority) {
                auto it = axis_lexicons->by_axis.find(a);
                if (it == axis_lexicons->by_axis.end() || !it->second.contains(cps)) continue;
                auto& list = axes[a];
                if (std::find(list.begin(), list.end(), token) == list.end()) list.push_back(token);
                break;
            }
        }
    }
    if (axes.empty()) throw UnparseableCode("no axis knowledge for code " + code.code);
    return axes;
}

std::vector<std::string> expand_synonyms(const std::vector<std::string>& keywords, const SynonymLexicon& lexicon) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& k : keywords) {
        if (seen.insert(k).second) out.push_back(k);
    }
    for (const auto& k : keywords) {
        for (const auto& s : lexicon.lookup(k)) {
            if (seen.insert(s).second) out.push_back(s);
        }
    }
    return out;
}

std::vector<std::string> locations_for(const IcdCode& code, const PriorLocationTable& table,
                                       const LocationRegistry& registry) {
    if (const auto* row = table.find(code.group); row != nullptr && !row->empty()) return *row;
    return registry.ids();
}

}  // namespace evicode
