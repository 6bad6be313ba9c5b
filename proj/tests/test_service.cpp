#include <gtest/gtest.h>

#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include "evicode/api.hpp"
#include "evicode/cli.hpp"
#include "evicode/error.hpp"
#include "evicode/session.hpp"
#include "evicode/toy.hpp"
#include "httplib.h"
#include "support.hpp"

using namespace evicode;

namespace {

SessionEvent event(std::string record, std::size_t diag, SessionAction action, std::string payload,
                   std::int64_t ts, std::int64_t elapsed) {
    SessionEvent e;
    e.record_id = std::move(record);
    e.diagnosis_index = diag;
    e.action = action;
    e.payload = std::move(payload);
    e.timestamp_ms = ts;
    e.elapsed_ms = elapsed;
    return e;
}

GoldLookup gold_map(std::map<std::pair<std::string, std::size_t>, std::string> m) {
    return [m](const std::string& r, std::size_t d) -> std::optional<std::string> {
        auto it = m.find({r, d});
        if (it == m.end()) return std::nullopt;
        return it->second;
    };
}

nlohmann::json raw_record(const std::string& id, const std::string& gold) {
    return {{"record_id", id},
            {"sections", {{{"location_id", "chief-complaint"}, {"text", "发热三天。"}}}},
            {"diagnoses", {"肺炎"}},
            {"gold_codes", {{"0", gold}}}};
}

struct ToyService {
    toy::Bundle bundle = toy::make_bundle();
    std::shared_ptr<const Engine> engine;

    ToyService() {
        auto assets = std::make_shared<Assets>(toy::to_assets(bundle));
        assets->verifier_model = toy::train_toy_verifier(bundle);
        engine = std::make_shared<const Engine>(assets, toy::toy_config());
    }
};

const ToyService& toy_service() {
    static const ToyService s;
    return s;
}

}  // namespace

TEST(SessionSummary, TwoAcceptsOneCorrect) {
    const auto gold = gold_map({{{"r1", 0}, "A00.000"}, {{"r2", 0}, "B01.000"}});
    const std::vector<SessionEvent> events = {
        event("r1", 0, SessionAction::Accepted, "A00.000", 1000, 100000),
        event("r2", 0, SessionAction::Accepted, "A00.000", 2000, 80000),
    };
    const auto s = summarize_session("s", "c", events, gold);
    EXPECT_EQ(s.decided, 2u);
    EXPECT_EQ(s.correct, 1u);
    EXPECT_DOUBLE_EQ(s.accuracy, 0.5);
    EXPECT_EQ(s.records, 2u);
    EXPECT_DOUBLE_EQ(s.mean_seconds_per_record, 90.0);
}

TEST(SessionSummary, LastDecisionWinsAndRejectionWithdraws) {
    const auto gold = gold_map({{{"r1", 0}, "A00.000"}, {{"r1", 1}, "B01.000"}});
    const std::vector<SessionEvent> events = {
        event("r1", 0, SessionAction::Accepted, "B01.000", 1, 10000),
        event("r1", 0, SessionAction::Modified, "A00.000", 2, 20000),
        event("r1", 1, SessionAction::Accepted, "B01.000", 3, 30000),
        event("r1", 1, SessionAction::Rejected, "B01.000", 4, 40000),
        event("r1", 0, SessionAction::SupportOverride, "Partially", 5, 45000),
    };
    const auto s = summarize_session("s", "c", events, gold);
    EXPECT_EQ(s.events, 5u);
    EXPECT_EQ(s.decided, 1u);
    EXPECT_EQ(s.correct, 1u);
    EXPECT_DOUBLE_EQ(s.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(s.mean_seconds_per_record, 45.0);
}

TEST(SessionEvent, JsonValidation) {
    auto e = event("r1", 0, SessionAction::SupportOverride, "Fully", 5, 6);
    e.session_id = "s-000001";
    const auto back = session_event_from_json(nlohmann::json::parse(to_json(e).dump()));
    EXPECT_EQ(to_json(back).dump(), to_json(e).dump());
    auto j = nlohmann::json::parse(to_json(e).dump());
    j["payload"] = "Mostly";
    EXPECT_THROW(session_event_from_json(j), ValidationError);
    j["action"] = "accepted";
    j["payload"] = "not a code";
    EXPECT_THROW(session_event_from_json(j), ValidationError);
    j.erase("timestamp");
    EXPECT_THROW(session_event_from_json(j), ValidationError);
    EXPECT_THROW(session_action_from_string("ignored"), ValidationError);
}

TEST(RecordStore, EventOrderingAndLookups) {
    const auto registry = LocationRegistry::standard();
    RecordStore store(registry);
    EXPECT_EQ(store.put_record(raw_record("r1", "J18.900")), "r1");
    EXPECT_THROW(store.put_record(raw_record("../evil", "J18.900")), ValidationError);
    const auto sid = store.create_session("coder-a", 1000);
    store.append_event(sid, event("r1", 0, SessionAction::Accepted, "J18.900", 2000, 5000));
    EXPECT_THROW(store.append_event(sid, event("r1", 0, SessionAction::Accepted, "J18.900", 1500, 6000)),
                 ValidationError);
    EXPECT_THROW(store.append_event(sid, event("r1", 3, SessionAction::Accepted, "J18.900", 3000, 6000)),
                 ValidationError);
    EXPECT_THROW(store.append_event(sid, event("nope", 0, SessionAction::Accepted, "J18.900", 3000, 6000)), NotFound);
    EXPECT_THROW(store.append_event("s-999999", event("r1", 0, SessionAction::Accepted, "J18.900", 3000, 6000)),
                 NotFound);
    auto other = event("r1", 0, SessionAction::Accepted, "J18.900", 3000, 6000);
    other.session_id = "s-424242";
    EXPECT_THROW(store.append_event(sid, other), ValidationError);
    EXPECT_EQ(store.session(sid).events.size(), 1u);
    const auto s = store.summary(sid);
    EXPECT_EQ(s.coder, "coder-a");
    EXPECT_DOUBLE_EQ(s.accuracy, 1.0);
    EXPECT_THROW(store.record("missing"), NotFound);
    EXPECT_FALSE(store.result("r1").has_value());
}

TEST(RecordStore, ReplaysFromDataDirectory) {
    const auto registry = LocationRegistry::standard();
    testing_support::TempDir dir;
    std::string sid;
    {
        RecordStore store(registry, dir.path());
        store.put_record(raw_record("r1", "J18.900"));
        store.put_record(raw_record("r2", "J18.900"));
        sid = store.create_session("coder-b", 10);
        store.append_event(sid, event("r1", 0, SessionAction::Accepted, "J18.900", 20, 100000));
        store.append_event(sid, event("r2", 0, SessionAction::Accepted, "A00.000", 30, 80000));
    }
    RecordStore again(registry, dir.path());
    EXPECT_TRUE(again.has_record("r2"));
    const auto session = again.session(sid);
    EXPECT_EQ(session.coder, "coder-b");
    ASSERT_EQ(session.events.size(), 2u);
    EXPECT_EQ(session.events[1].payload, "A00.000");
    const auto s = again.summary(sid);
    EXPECT_DOUBLE_EQ(s.accuracy, 0.5);
    EXPECT_DOUBLE_EQ(s.mean_seconds_per_record, 90.0);
    EXPECT_NE(again.create_session("x", 40), sid);
}

TEST(Api, RoutesThroughHandle) {
    const auto& toy = toy_service();
    auto store = std::make_shared<RecordStore>(toy.engine->assets().registry);
    ApiService api(toy.engine, store);

    EXPECT_EQ(api.handle("GET", "/v1/health", "").status, 200);
    EXPECT_EQ(api.handle("GET", "/v1/nothing", "").status, 404);

    const auto created = api.handle("POST", "/v1/records", toy.bundle.records[1].dump());
    ASSERT_EQ(created.status, 201);
    const std::string id = nlohmann::json::parse(created.body)["record_id"];
    EXPECT_EQ(api.handle("POST", "/v1/records", "{bad").status, 400);

    auto got = nlohmann::json::parse(api.handle("GET", "/v1/records/" + id, "").body);
    EXPECT_TRUE(got["result"].is_null());
    const auto coded = api.handle("POST", "/v1/records/" + id + "/code", "");
    ASSERT_EQ(coded.status, 200);
    const auto result = nlohmann::json::parse(coded.body);
    EXPECT_EQ(result["record_id"], id);
    EXPECT_FALSE(result.contains("timings_ms"));
    got = nlohmann::json::parse(api.handle("GET", "/v1/records/" + id, "").body);
    EXPECT_EQ(got["result"].dump(), result.dump());
    EXPECT_EQ(api.handle("POST", "/v1/records/missing/code", "").status, 404);

    const auto sess = api.handle("POST", "/v1/sessions", R"({"coder":"c1"})");
    ASSERT_EQ(sess.status, 201);
    const std::string sid = nlohmann::json::parse(sess.body)["session_id"];
    const std::string gold0 = result["diagnoses"][0]["recommendations"][0]["code"];
    nlohmann::json ev = {{"timestamp", 100}, {"record_id", id}, {"diagnosis_index", 0},
                         {"action", "accepted"}, {"payload", gold0}, {"elapsed_ms", 30000}};
    EXPECT_EQ(api.handle("POST", "/v1/sessions/" + sid + "/events", ev.dump()).status, 202);
    ev["timestamp"] = 50;
    const auto stale = api.handle("POST", "/v1/sessions/" + sid + "/events", ev.dump());
    EXPECT_EQ(stale.status, 400);
    EXPECT_EQ(nlohmann::json::parse(stale.body)["error"]["kind"], "validation_error");
    EXPECT_EQ(api.handle("POST", "/v1/sessions/s-999999/events", ev.dump()).status, 404);

    const auto events = nlohmann::json::parse(api.handle("GET", "/v1/sessions/" + sid + "/events", "").body);
    EXPECT_EQ(events["events"].size(), 1u);
    const auto summary = nlohmann::json::parse(api.handle("GET", "/v1/sessions/" + sid + "/summary", "").body);
    EXPECT_EQ(summary["decided"], 1);
    EXPECT_DOUBLE_EQ(summary["accuracy"].get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(summary["mean_seconds_per_record"].get<double>(), 30.0);
}

TEST(Api, ServesHttpAndMatchesCliOutput) {
    const auto& toy = toy_service();
    testing_support::TempDir dir;
    auto store = std::make_shared<RecordStore>(toy.engine->assets().registry, dir.path() / "data");
    ApiService api(toy.engine, store);
    std::promise<int> ready;
    std::thread server([&] { api.serve("127.0.0.1", 0, [&](int port) { ready.set_value(port); }); });
    const int port = ready.get_future().get();

    httplib::Client client("127.0.0.1", port);
    auto health = client.Get("/v1/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    EXPECT_EQ(health->get_header_value("Access-Control-Allow-Origin"), "*");

    const auto& record = toy.bundle.records[0];
    auto created = client.Post("/v1/records", record.dump(), "application/json");
    ASSERT_TRUE(created);
    EXPECT_EQ(created->status, 201);
    const std::string id = record["record_id"];
    auto coded = client.Post("/v1/records/" + id + "/code", "", "application/json");
    ASSERT_TRUE(coded);
    EXPECT_EQ(coded->status, 200);
    api.stop();
    server.join();

    const auto toy_dir = dir.path() / "toy";
    std::ostringstream out, err;
    ASSERT_EQ(cli::run({"toy", "--out", toy_dir.string()}, out, err), 0) << err.str();
    ASSERT_EQ(cli::run({"--config", (toy_dir / "config.json").string(), "code", "--in", (toy_dir / "records").string(),
                        "--out", (dir.path() / "out").string()},
                       out, err),
              0)
        << err.str();
    std::ifstream in(dir.path() / "out" / (id + ".json"));
    std::string cli_text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    while (!cli_text.empty() && cli_text.back() == '\n') cli_text.pop_back();
    EXPECT_EQ(coded->body, cli_text);
}
