#include "evicode/session.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "evicode/error.hpp"

namespace evicode {

namespace fs = std::filesystem;

std::string_view to_string(SessionAction action) noexcept {
    switch (action) {
        case SessionAction::Accepted:
            return "accepted";
        case SessionAction::Rejected:
            return "rejected";
        case SessionAction::Modified:
            return "modified";
        case SessionAction::SupportOverride:
            break;
    }
    return "support_override";
}

SessionAction session_action_from_string(std::string_view name) {
    for (auto a : {SessionAction::Accepted, SessionAction::Rejected, SessionAction::Modified,
                   SessionAction::SupportOverride}) {
        if (to_string(a) == name) return a;
    }
    throw ValidationError("unknown session action '" + std::string(name) + "'");
}

nlohmann::ordered_json to_json(const SessionEvent& e) {
    nlohmann::ordered_json out;
    out["session_id"] = e.session_id;
    out["timestamp"] = e.timestamp_ms;
    out["record_id"] = e.record_id;
    out["diagnosis_index"] = e.diagnosis_index;
    out["action"] = std::string(to_string(e.action));
    out["payload"] = e.payload;
    out["elapsed_ms"] = e.elapsed_ms;
    return out;
}

SessionEvent session_event_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("event must be an object");
    SessionEvent e;
    try {
        e.session_id = j.value("session_id", std::string{});
        e.timestamp_ms = j.at("timestamp").get<std::int64_t>();
        e.record_id = j.at("record_id").get<std::string>();
        e.diagnosis_index = j.at("diagnosis_index").get<std::size_t>();
        e.action = session_action_from_string(j.at("action").get<std::string>());
        e.payload = j.at("payload").get<std::string>();
        e.elapsed_ms = j.at("elapsed_ms").get<std::int64_t>();
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("malformed event: ") + ex.what());
    }
    if (e.timestamp_ms < 0) throw ValidationError("event timestamp must be non-negative");
    if (e.elapsed_ms < 0) throw ValidationError("event elapsed_ms must be non-negative");
    if (e.action == SessionAction::SupportOverride) {
        support_level_from_string(e.payload);
    } else if (!is_valid_code(e.payload)) {
        throw ValidationError("event payload '" + e.payload + "' is not an ICD code");
    }
    return e;
}

nlohmann::ordered_json to_json(const SessionSummary& s) {
    nlohmann::ordered_json out;
    out["session_id"] = s.session_id;
    out["coder"] = s.coder;
    out["events"] = s.events;
    out["decided"] = s.decided;
    out["graded"] = s.graded;
    out["correct"] = s.correct;
    out["accuracy"] = s.accuracy;
    out["records"] = s.records;
    out["mean_seconds_per_record"] = s.mean_seconds_per_record;
    return out;
}

SessionSummary summarize_session(const std::string& session_id, const std::string& coder,
                                 const std::vector<SessionEvent>& events, const GoldLookup& gold) {
    SessionSummary s;
    s.session_id = session_id;
    s.coder = coder;
    s.events = events.size();
    std::map<std::pair<std::string, std::size_t>, std::optional<std::string>> final_code;
    std::map<std::string, std::int64_t> record_ms;
    for (const auto& e : events) {
        auto& slot = final_code[{e.record_id, e.diagnosis_index}];
        switch (e.action) {
            case SessionAction::Accepted:
            case SessionAction::Modified:
                slot = e.payload;
                break;
            case SessionAction::Rejected:
                if (slot && *slot == e.payload) slot.reset();
                break;
            case SessionAction::SupportOverride:
                break;
        }
        auto& ms = record_ms[e.record_id];
        ms = std::max(ms, e.elapsed_ms);
    }
    for (const auto& [key, code] : final_code) {
        if (!code) continue;
        ++s.decided;
        const auto g = gold ? gold(key.first, key.second) : std::nullopt;
        if (!g) continue;
        ++s.graded;
        if (*g == *code) ++s.correct;
    }
    s.accuracy = s.graded == 0 ? 0.0 : static_cast<double>(s.correct) / s.graded;
    s.records = record_ms.size();
    if (!record_ms.empty()) {
        double total = 0.0;
        for (const auto& [id, ms] : record_ms) total += static_cast<double>(ms) / 1000.0;
        s.mean_seconds_per_record = total / record_ms.size();
    }
    return s;
}

namespace {

void check_record_id(const std::string& id) {
    if (id.empty() || id.size() > 128 || id == "." || id == "..") throw ValidationError("invalid record_id");
    for (char ch : id) {
        const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
                        ch == '.' || ch == '_' || ch == '-';
        if (!ok) throw ValidationError("record_id '" + id + "' may only use letters, digits, '.', '_' and '-'");
    }
}

void write_file(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << text;
    }
    fs::rename(tmp, path);
}

void append_line(const fs::path& path, const std::string& line) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw Error("cannot append to " + path.string());
    out << line << '\n';
    out.flush();
}

}  // namespace

RecordStore::RecordStore(const LocationRegistry& registry, fs::path data_dir)
    : registry_(registry), dir_(std::move(data_dir)) {
    if (!dir_.empty()) {
        fs::create_directories(dir_ / "records");
        fs::create_directories(dir_ / "sessions");
        replay();
    }
}

void RecordStore::replay() {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir_ / "records")) {
        if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream in(f);
        nlohmann::json raw = nlohmann::json::parse(in);
        EmrDocument doc = ingest_record(raw, registry_);
        records_[doc.record_id] = std::move(doc);
    }
    files.clear();
    for (const auto& e : fs::directory_iterator(dir_ / "sessions")) {
        if (e.path().extension() == ".ndjson") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream in(f);
        std::string line;
        Session s;
        bool header = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            if (header) {
                s.id = j.at("session_id").get<std::string>();
                s.coder = j.value("coder", std::string{});
                s.created_ms = j.value("created_ms", std::int64_t{0});
                header = false;
            } else {
                s.events.push_back(session_event_from_json(j));
            }
        }
        if (header) continue;
        unsigned long n = 0;
        if (std::sscanf(s.id.c_str(), "s-%lu", &n) == 1) next_session_ = std::max<std::size_t>(next_session_, n + 1);
        sessions_[s.id] = std::move(s);
    }
}

std::string RecordStore::put_record(const nlohmann::json& raw) {
    EmrDocument doc = ingest_record(raw, registry_);
    check_record_id(doc.record_id);
    std::unique_lock lock(mu_);
    const std::string id = doc.record_id;
    if (!dir_.empty()) write_file(dir_ / "records" / (id + ".json"), raw.dump());
    records_[id] = std::move(doc);
    results_.erase(id);
    return id;
}

EmrDocument RecordStore::record(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = records_.find(id);
    if (it == records_.end()) throw NotFound("no record '" + id + "'");
    return it->second;
}

bool RecordStore::has_record(const std::string& id) const {
    std::shared_lock lock(mu_);
    return records_.contains(id);
}

void RecordStore::set_result(const std::string& id, CodingResult result) {
    std::unique_lock lock(mu_);
    if (!records_.contains(id)) throw NotFound("no record '" + id + "'");
    results_[id] = std::move(result);
}

std::optional<CodingResult> RecordStore::result(const std::string& id) const {
    std::shared_lock lock(mu_);
    if (!records_.contains(id)) throw NotFound("no record '" + id + "'");
    auto it = results_.find(id);
    if (it == results_.end()) return std::nullopt;
    return it->second;
}

std::string RecordStore::create_session(const std::string& coder, std::int64_t now_ms) {
    std::unique_lock lock(mu_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "s-%06zu", next_session_++);
    Session s{buf, coder, now_ms, {}};
    if (!dir_.empty()) {
        nlohmann::ordered_json header;
        header["session_id"] = s.id;
        header["coder"] = s.coder;
        header["created_ms"] = s.created_ms;
        write_file(dir_ / "sessions" / (s.id + ".ndjson"), header.dump() + "\n");
    }
    sessions_[s.id] = s;
    return s.id;
}

void RecordStore::append_event(const std::string& session_id, SessionEvent event) {
    std::unique_lock lock(mu_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw NotFound("no session '" + session_id + "'");
    if (event.session_id.empty()) event.session_id = session_id;
    if (event.session_id != session_id) throw ValidationError("event session_id does not match the session");
    auto rec = records_.find(event.record_id);
    if (rec == records_.end()) throw NotFound("no record '" + event.record_id + "'");
    if (event.diagnosis_index >= rec->second.diagnoses.size()) {
        throw ValidationError("record " + event.record_id + " has no diagnosis " +
                              std::to_string(event.diagnosis_index));
    }
    Session& s = it->second;
    if (!s.events.empty() && event.timestamp_ms < s.events.back().timestamp_ms) {
        throw ValidationError("event timestamp precedes the previous event");
    }
    if (!dir_.empty()) append_line(dir_ / "sessions" / (session_id + ".ndjson"), to_json(event).dump());
    s.events.push_back(std::move(event));
}

Session RecordStore::session(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("no session '" + id + "'");
    return it->second;
}

std::optional<std::string> RecordStore::gold_of(const std::string& record_id, std::size_t diagnosis_index) const {
    auto it = records_.find(record_id);
    if (it == records_.end()) return std::nullopt;
    auto g = it->second.gold_codes.find(diagnosis_index);
    if (g == it->second.gold_codes.end()) return std::nullopt;
    return g->second;
}

SessionSummary RecordStore::summary(const std::string& session_id) const {
    std::shared_lock lock(mu_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw NotFound("no session '" + session_id + "'");
    return summarize_session(it->second.id, it->second.coder, it->second.events,
                             [this](const std::string& r, std::size_t d) { return gold_of(r, d); });
}

}  // namespace evicode
