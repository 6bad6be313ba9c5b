#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "evicode/corpus.hpp"
#include "evicode/pipeline.hpp"
#include "json.hpp"

namespace evicode {

enum class SessionAction { Accepted, Rejected, Modified, SupportOverride };

std::string_view to_string(SessionAction action) noexcept;
SessionAction session_action_from_string(std::string_view name);

struct SessionEvent {
    std::string session_id;
    std::int64_t timestamp_ms = 0;
    std::string record_id;
    std::size_t diagnosis_index = 0;
    SessionAction action = SessionAction::Accepted;
    /// Code for accepted/rejected/modified; support level for support_override.
    std::string payload;
    std::int64_t elapsed_ms = 0;
};

nlohmann::ordered_json to_json(const SessionEvent& e);
/// Shape check only; cross-record checks happen in RecordStore::append_event.
SessionEvent session_event_from_json(const nlohmann::json& j);

struct SessionSummary {
    std::string session_id;
    std::string coder;
    std::size_t events = 0;
    std::size_t decided = 0;
    std::size_t correct = 0;
    /// Decided diagnoses that carry a gold code.
    std::size_t graded = 0;
    double accuracy = 0.0;
    std::size_t records = 0;
    double mean_seconds_per_record = 0.0;
};

nlohmann::ordered_json to_json(const SessionSummary& s);

/// Gold lookup used by the summary fold: (record, diagnosis) -> code.
using GoldLookup = std::function<std::optional<std::string>(const std::string&, std::size_t)>;

/// Pure fold over an ordered event list. The final code of a diagnosis is the
/// payload of its last accepted or modified event; a later rejection of that
/// same code withdraws it. Record time is the largest elapsed_ms seen.
SessionSummary summarize_session(const std::string& session_id, const std::string& coder,
                                 const std::vector<SessionEvent>& events, const GoldLookup& gold);

struct Session {
    std::string id;
    std::string coder;
    std::int64_t created_ms = 0;
    std::vector<SessionEvent> events;
};

/// Holds ingested records, their latest coding results and coder sessions.
/// With a data directory, records and sessions persist as files and are
/// replayed on construction: records/<id>.json, sessions/<id>.ndjson.
class RecordStore {
public:
    explicit RecordStore(const LocationRegistry& registry, std::filesystem::path data_dir = {});

    /// Record ids are limited to [A-Za-z0-9._-]. Replaces any record with the same id and drops its stale result.
    std::string put_record(const nlohmann::json& raw);
    EmrDocument record(const std::string& id) const;
    bool has_record(const std::string& id) const;
    void set_result(const std::string& id, CodingResult result);
    std::optional<CodingResult> result(const std::string& id) const;

    std::string create_session(const std::string& coder, std::int64_t now_ms);
    /// Validates against the session, record and prior timestamps, then
    /// appends. Throws NotFound or ValidationError.
    void append_event(const std::string& session_id, SessionEvent event);
    Session session(const std::string& id) const;
    SessionSummary summary(const std::string& session_id) const;

private:
    void replay();
    std::optional<std::string> gold_of(const std::string& record_id, std::size_t diagnosis_index) const;

    const LocationRegistry& registry_;
    std::filesystem::path dir_;
    mutable std::shared_mutex mu_;
    std::map<std::string, EmrDocument> records_;
    std::map<std::string, CodingResult> results_;
    std::map<std::string, Session> sessions_;
    std::size_t next_session_ = 1;
};

}  // namespace evicode
