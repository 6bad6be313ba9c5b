#include "evicode/toy.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <set>

#include "evicode/error.hpp"
#include "evicode/eval.hpp"
#include "evicode/rng.hpp"
#include "evicode/utf8.hpp"

namespace evicode::toy {

namespace fs = std::filesystem;

namespace {

struct Site {
    const char* group;
    const char* word;
};

const std::array<Site, 20> kSites = {{
    {"J18", "肺部"},   {"K76", "肝脏"},   {"N28", "肾脏"},   {"K31", "胃部"},     {"K63", "结肠"},
    {"I51", "心肌"},   {"K86", "胰腺"},   {"K82", "胆囊"},   {"N32", "膀胱"},     {"E07", "甲状腺"},
    {"D73", "脾脏"},   {"K22", "食管"},   {"K59", "十二指肠"}, {"N42", "前列腺"}, {"N64", "乳腺"},
    {"N83", "卵巢"},   {"N85", "子宫"},   {"J98", "支气管"}, {"J34", "鼻窦"},     {"H31", "脉络膜"},
}};

const std::array<const char*, 10> kEtiology = {"细菌", "病毒", "真菌", "结核", "外伤",
                                               "药物", "酒精", "寄生虫", "缺血", "自身免疫"};
const std::array<const char*, 10> kPathology = {"炎症", "溃疡", "钙化", "肿瘤", "纤维化",
                                                "坏死", "囊肿", "结石", "梗阻", "增生"};
const std::array<const char*, 10> kManifestation = {"疼痛", "发热", "咳嗽", "呕吐", "水肿",
                                                    "黄疸", "贫血", "腹泻", "气促", "乏力"};

const std::array<std::pair<const char*, const char*>, 16> kSynonyms = {{
    {"肺部", "肺脏"}, {"肝脏", "肝部"}, {"肾脏", "肾部"}, {"胃部", "胃体"},
    {"结肠", "大肠"}, {"炎症", "发炎"}, {"肿瘤", "肿物"}, {"疼痛", "痛感"},
    {"发热", "发烧"}, {"呕吐", "呕逆"}, {"乏力", "疲乏"}, {"气促", "气短"},
    {"外伤", "创伤"}, {"酒精", "乙醇"}, {"水肿", "浮肿"}, {"腹泻", "泄泻"},
}};

const char* kFigureCode = "H31.403";
const char* kFigureDescription = "脉络膜出血和破裂";

constexpr std::size_t kDim = 64;

/// Axis words of generated code (site i, combination j).
struct Combo {
    std::size_t site;
    std::size_t etiology;
    std::size_t pathology;
    std::size_t manifestation;
};

Combo combo_of(std::size_t site, std::size_t j) { return Combo{site, j, (j + site) % 10, (j + 3 * site) % 10}; }

std::string description_of(const Combo& c) {
    return std::string(kEtiology[c.etiology]) + "性" + kSites[c.site].word + kPathology[c.pathology] + "伴" +
           kManifestation[c.manifestation];
}

std::string code_of(std::size_t site, std::size_t j) {
    return std::string(kSites[site].group) + ".90" + std::to_string(j);
}

const char* kNumbers[] = {"一", "两", "三", "四", "五", "六", "七"};

/// A planted diagnosis: gold code, diagnosis text and its sentences by section.
struct Plant {
    std::string code;
    std::string diagnosis;
    std::map<std::string, std::string> sentences;
};

Plant plant_for(const std::string& code, const Combo* c, Rng& rng) {
    Plant p;
    p.code = code;
    const std::string days = std::string(kNumbers[rng.below(7)]) + "天";
    if (c == nullptr) {
        p.diagnosis = kFigureDescription;
        p.sentences["chief-complaint"] = "视物模糊" + days;
        p.sentences["fundus-examination"] = "眼底见脉络膜出血及破裂";
        p.sentences["discharge-summary"] = "患者脉络膜病变稳定，予以出院";
        return p;
    }
    const std::string site = kSites[c->site].word;
    p.diagnosis = std::string(kEtiology[c->etiology]) + "性" + site + kPathology[c->pathology];
    p.sentences["chief-complaint"] = std::string(kManifestation[c->manifestation]) + days;
    p.sentences["microbiology"] = std::string("病原学提示") + kEtiology[c->etiology] + "感染";
    p.sentences["ct"] = "影像示" + site + kPathology[c->pathology];
    p.sentences["discharge-summary"] = "患者" + site + "病情好转，予以出院";
    return p;
}

const std::array<const char*, 7> kSectionOrder = {"chief-complaint", "present-illness", "microbiology", "ct",
                                                  "fundus-examination", "discharge-summary", "discharge-orders"};

nlohmann::ordered_json record_json(const std::string& id, const std::vector<Plant>& plants) {
    std::map<std::string, std::vector<std::string>> by_section;
    for (const auto& p : plants) {
        for (const auto& [loc, s] : p.sentences) by_section[loc].push_back(s);
    }
    by_section["present-illness"].push_back("患者近期症状加重，门诊拟诊收入院");
    by_section["discharge-orders"].push_back("注意休息，定期复诊");
    nlohmann::ordered_json rec;
    rec["record_id"] = id;
    auto sections = nlohmann::ordered_json::array();
    for (const char* loc : kSectionOrder) {
        auto it = by_section.find(loc);
        if (it == by_section.end()) continue;
        std::string text;
        // The chief complaint reads as one sentence; other sections list one sentence per finding.
        const bool joined = std::string_view(loc) == "chief-complaint";
        for (std::size_t i = 0; i < it->second.size(); ++i) {
            if (i > 0 && joined) text += "，";
            text += it->second[i];
            if (!joined) text += "。";
        }
        if (joined) text += "。";
        sections.push_back({{"location_id", loc}, {"text", text}});
    }
    rec["sections"] = std::move(sections);
    auto diagnoses = nlohmann::ordered_json::array();
    auto gold = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < plants.size(); ++i) {
        diagnoses.push_back(plants[i].diagnosis);
        gold[std::to_string(i)] = plants[i].code;
    }
    rec["diagnoses"] = std::move(diagnoses);
    rec["gold_codes"] = std::move(gold);
    return rec;
}

/// True when some non-gold code has every nonempty axis matched somewhere in
/// the record, synonyms included.
bool has_spurious_full_coverage(const nlohmann::ordered_json& rec, const std::set<std::string>& golds,
                                const Bundle& b, const std::map<std::string, AxisKnowledge>& axes) {
    std::string text;
    for (const auto& s : rec["sections"]) text += s["text"].get<std::string>();
    for (const auto& [code, k] : axes) {
        if (golds.contains(code)) continue;
        bool all = true;
        for (Axis a : kAllAxes) {
            if (k[a].empty()) continue;
            const auto words = expand_synonyms(k[a], b.synonyms);
            if (keyword_hits(text, words).empty()) {
                all = false;
                break;
            }
        }
        if (all) return true;
    }
    return false;
}

}  // namespace

Bundle make_bundle(std::uint64_t seed) {
    Rng rng(seed);
    Bundle b;
    std::map<std::string, Combo> combos;
    for (std::size_t i = 0; i < kSites.size(); ++i) {
        const bool figure_group = std::string_view(kSites[i].group) == "H31";
        for (std::size_t j = 0; j < 10; ++j) {
            if (figure_group && j == 9) {
                b.codes.push_back(make_code(kFigureCode, kFigureDescription));
                continue;
            }
            const Combo c = combo_of(i, j);
            b.codes.push_back(make_code(code_of(i, j), description_of(c)));
            combos.emplace(code_of(i, j), c);
        }
    }

    AxisKnowledge figure;
    figure[Axis::Anatomy] = {"脉络膜"};
    figure[Axis::Manifestation] = {"出血", "破裂"};
    b.axis_table.emplace(kFigureCode, figure);

    std::vector<std::string> sites, manifestations(kManifestation.begin(), kManifestation.end());
    for (const auto& s : kSites) sites.push_back(s.word);
    manifestations.push_back("出血");
    manifestations.push_back("破裂");
    b.axis_lexicons_json["etiology"] = std::vector<std::string>(kEtiology.begin(), kEtiology.end());
    b.axis_lexicons_json["anatomy"] = sites;
    b.axis_lexicons_json["pathology"] = std::vector<std::string>(kPathology.begin(), kPathology.end());
    b.axis_lexicons_json["manifestation"] = manifestations;
    b.axis_lexicons_json["priority"] = {"anatomy", "etiology", "pathology", "manifestation"};
    b.axis_lexicons = axis_lexicons_from_json(b.axis_lexicons_json);

    b.synonyms_json = nlohmann::ordered_json::object();
    for (const auto& [k, s] : kSynonyms) {
        b.synonyms.add(k, s);
        b.synonyms_json[k] = {s};
    }

    // Every keyword gets its own axis plus a little noise; a synonym sits close to its keyword.
    std::vector<std::string> words;
    for (const auto* w : kEtiology) words.emplace_back(w);
    for (const auto& w : sites) words.push_back(w);
    for (const auto* w : kPathology) words.emplace_back(w);
    for (const auto& w : manifestations) words.push_back(w);
    b.embeddings = EmbeddingTable(kDim);
    std::map<std::string, Vector> vecs;
    for (std::size_t i = 0; i < words.size(); ++i) {
        const auto& w = words[i];
        Vector v(kDim);
        for (auto& x : v) x = rng.uniform(-0.1, 0.1);
        v[i % kDim] += 1.0;
        vecs[w] = v;
        b.embeddings.add(w, v);
    }
    for (const auto& [k, s] : kSynonyms) {
        Vector v = vecs.at(k);
        for (auto& x : v) x += rng.uniform(-0.05, 0.05);
        b.embeddings.add(s, v);
    }
    b.lexicon_words = words;
    for (const auto& [k, s] : kSynonyms) b.lexicon_words.emplace_back(s);

    b.prior_json = nlohmann::ordered_json::array();
    for (const auto& s : kSites) {
        const bool eye = std::string_view(s.group) == "H31";
        nlohmann::ordered_json locs =
            eye ? nlohmann::ordered_json{"chief-complaint", "fundus-examination", "discharge-summary"}
                : nlohmann::ordered_json{"chief-complaint", "present-illness", "microbiology", "ct",
                                         "discharge-summary"};
        b.prior_json.push_back({{"group_start", s.group}, {"group_end", s.group}, {"locations", locs}});
    }

    std::map<std::string, AxisKnowledge> axes;
    for (const auto& c : b.codes) axes.emplace(c.code, parse_axes(c, &b.axis_table, &b.axis_lexicons));

    // Diagnoses per record; the figure code is planted in the second record.
    const std::array<std::size_t, kToyRecords> per_record = {2, 2, 1, 2, 1};
    std::set<std::string> used;
    for (std::size_t r = 0; r < kToyRecords; ++r) {
        char id[16];
        std::snprintf(id, sizeof id, "toy-%03zu", r + 1);
        for (int attempt = 0;; ++attempt) {
            if (attempt > 1000) throw Error("toy generator could not place record " + std::string(id));
            std::vector<Plant> plants;
            std::set<std::string> golds;
            std::set<std::size_t> sites_used;
            bool ok = true;
            for (std::size_t d = 0; d < per_record[r]; ++d) {
                if (r == 1 && d == 0) {
                    plants.push_back(plant_for(kFigureCode, nullptr, rng));
                    golds.insert(kFigureCode);
                    sites_used.insert(19);
                    continue;
                }
                const std::size_t site = rng.below(19);
                const std::size_t j = rng.below(10);
                const std::string code = code_of(site, j);
                if (!sites_used.insert(site).second || used.contains(code)) {
                    ok = false;
                    break;
                }
                const Combo c = combos.at(code);
                plants.push_back(plant_for(code, &c, rng));
                golds.insert(code);
            }
            if (!ok) continue;
            auto rec = record_json(id, plants);
            if (has_spurious_full_coverage(rec, golds, b, axes)) continue;
            used.insert(golds.begin(), golds.end());
            b.records.push_back(std::move(rec));
            break;
        }
    }
    return b;
}

Assets to_assets(const Bundle& b) {
    Assets a;
    a.codes = b.codes;
    a.axis_table = b.axis_table;
    a.axis_lexicons = b.axis_lexicons;
    a.synonyms = b.synonyms;
    a.prior = PriorLocationTable::from_json(b.prior_json, a.registry);
    a.embeddings = b.embeddings;
    a.lexicon = Lexicon(b.lexicon_words);
    a.finalize_lexicon();
    return a;
}

Config toy_config() {
    Config c;
    c.assets.code_table = "codes.tsv";
    c.assets.axis_table = "axis_table.json";
    c.assets.axis_lexicons = "axis_lexicons.json";
    c.assets.synonyms = "synonyms.json";
    c.assets.prior_table = "prior_table.json";
    c.assets.embeddings = "embeddings.txt";
    c.assets.lexicon = "lexicon.txt";
    c.assets.verifier_model = "verifier.json";
    return c;
}

std::vector<std::pair<std::string, std::string>> perturbed_diagnoses(const Bundle& b, std::uint64_t seed) {
    static const std::u32string kFillers = U"的病症和急慢型部";
    Rng rng(seed);
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& code : b.codes) {
        const std::u32string d = utf8::decode(code.description);
        // One character dropped.
        {
            std::u32string x = d;
            x.erase(rng.below(x.size()), 1);
            out.emplace_back(code.code, utf8::encode(x));
        }
        // Two characters substituted.
        {
            std::u32string x = d;
            for (int k = 0; k < 2; ++k) x[rng.below(x.size())] = kFillers[rng.below(kFillers.size())];
            out.emplace_back(code.code, utf8::encode(x));
        }
        // A keyword swapped for its synonym, else one character inserted.
        std::string swapped = code.description;
        bool did = false;
        for (const auto& [k, s] : kSynonyms) {
            auto pos = swapped.find(k);
            if (pos == std::string::npos) continue;
            swapped.replace(pos, std::string_view(k).size(), s);
            did = true;
            break;
        }
        if (!did) {
            std::u32string x = d;
            x.insert(x.begin() + static_cast<std::ptrdiff_t>(rng.below(x.size() + 1)),
                     kFillers[rng.below(kFillers.size())]);
            swapped = utf8::encode(x);
        }
        out.emplace_back(code.code, swapped);
    }
    return out;
}

FeatureVerifierModel train_toy_verifier(const Bundle& b) {
    auto assets = std::make_shared<const Assets>(to_assets(b));
    Config cfg = toy_config();
    const Engine engine(assets, cfg, false);
    std::vector<EmrDocument> docs;
    for (const auto& r : b.records) docs.push_back(ingest_record(r, assets->registry));
    const auto ds = build_verifier_dataset(docs, engine, cfg.candidates.n);
    TrainOptions opts;
    opts.seed = cfg.runtime.seed;
    opts.epochs = 5000;
    opts.learning_rate = 0.5;
    const auto trained = train_verifier(ds.examples, opts);
    for (const auto& ex : ds.examples) {
        const int label = trained.model.predict(ex.features) >= cfg.verify.threshold ? 1 : 0;
        if (label != ex.label) throw Error("toy verifier does not separate its training set");
    }
    return trained.model;
}

Written write(const fs::path& dir, std::uint64_t seed) {
    const Bundle b = make_bundle(seed);
    fs::create_directories(dir / "records");
    auto open = [&](const std::string& name) {
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + (dir / name).string());
        return out;
    };
    {
        auto out = open("codes.tsv");
        out << "code\tdescription\n";
        for (const auto& c : b.codes) out << c.code << '\t' << c.description << '\n';
    }
    {
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        for (const auto& [code, axes] : b.axis_table) j[code] = to_json(axes);
        open("axis_table.json") << j.dump(2) << '\n';
    }
    open("axis_lexicons.json") << b.axis_lexicons_json.dump(2) << '\n';
    open("synonyms.json") << b.synonyms_json.dump(2) << '\n';
    open("prior_table.json") << b.prior_json.dump(2) << '\n';
    {
        auto out = open("embeddings.txt");
        b.embeddings.save(out);
    }
    {
        auto out = open("lexicon.txt");
        for (const auto& w : b.lexicon_words) out << w << '\n';
    }
    for (const auto& r : b.records) {
        std::ofstream out(dir / "records" / (r["record_id"].get<std::string>() + ".json"), std::ios::binary);
        out << r.dump(2) << '\n';
    }
    train_toy_verifier(b).save(dir / "verifier.json");
    open("config.json") << toy_config().to_json().dump(2) << '\n';
    return Written{dir / "config.json", dir / "records"};
}

}  // namespace evicode::toy
