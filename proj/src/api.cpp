#include "evicode/api.hpp"

#include <chrono>
#include <regex>

#include "evicode/error.hpp"
#include "httplib.h"

namespace evicode {

namespace {

ApiResponse json_response(int status, const nlohmann::ordered_json& j) { return ApiResponse{status, j.dump()}; }

ApiResponse error_response(int status, std::string_view kind, const std::string& message) {
    nlohmann::ordered_json j;
    j["error"] = {{"kind", kind}, {"message", message}};
    return json_response(status, j);
}

nlohmann::json parse_body(const std::string& body) {
    if (body.empty()) return nlohmann::json::object();
    try {
        return nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("malformed request body: ") + e.what(), e.byte);
    }
}

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

const std::regex kRecordPath(R"(^/v1/records/([^/]+)$)");
const std::regex kCodePath(R"(^/v1/records/([^/]+)/code$)");
const std::regex kEventsPath(R"(^/v1/sessions/([^/]+)/events$)");
const std::regex kSummaryPath(R"(^/v1/sessions/([^/]+)/summary$)");

}  // namespace

ApiService::ApiService(std::shared_ptr<const Engine> engine, std::shared_ptr<RecordStore> store)
    : engine_(std::move(engine)), store_(std::move(store)) {
    if (!engine_ || !store_) throw ConfigError("api needs an engine and a record store");
}

ApiResponse ApiService::handle(const std::string& method, const std::string& path, const std::string& body) {
    try {
        return route(method, path, body);
    } catch (const NotFound& e) {
        return error_response(404, "not_found", e.what());
    } catch (const ParseError& e) {
        return error_response(400, "parse_error", e.what());
    } catch (const ValidationError& e) {
        return error_response(400, "validation_error", e.what());
    } catch (const UnparseableCode& e) {
        return error_response(400, "validation_error", e.what());
    } catch (const ConfigError& e) {
        return error_response(500, "config_error", e.what());
    } catch (const std::exception& e) {
        return error_response(500, "internal_error", e.what());
    }
}

ApiResponse ApiService::route(const std::string& method, const std::string& path, const std::string& body) {
    std::smatch m;
    if (method == "GET" && path == "/v1/health") {
        return json_response(200, {{"status", "ok"}, {"codes", engine_->assets().codes.size()}});
    }
    if (method == "POST" && path == "/v1/records") {
        const std::string id = store_->put_record(parse_body(body));
        return json_response(201, {{"record_id", id}});
    }
    if (method == "GET" && std::regex_match(path, m, kRecordPath)) {
        const std::string id = m[1];
        nlohmann::ordered_json out;
        out["record"] = to_json(store_->record(id));
        const auto result = store_->result(id);
        out["result"] = result ? to_json(*result, false) : nlohmann::ordered_json(nullptr);
        return json_response(200, out);
    }
    if (method == "POST" && std::regex_match(path, m, kCodePath)) {
        const std::string id = m[1];
        CodingResult result = engine_->code_document(store_->record(id));
        auto out = to_json(result, false);
        store_->set_result(id, std::move(result));
        return json_response(200, out);
    }
    if (method == "POST" && path == "/v1/sessions") {
        const auto j = parse_body(body);
        if (!j.is_object()) throw ValidationError("session request must be an object");
        const std::string coder = j.contains("coder") && j["coder"].is_string() ? j["coder"].get<std::string>() : "";
        return json_response(201, {{"session_id", store_->create_session(coder, now_ms())}});
    }
    if (std::regex_match(path, m, kEventsPath)) {
        const std::string id = m[1];
        if (method == "POST") {
            store_->append_event(id, session_event_from_json(parse_body(body)));
            return json_response(202, {{"ack", true}, {"events", store_->session(id).events.size()}});
        }
        if (method == "GET") {
            auto events = nlohmann::ordered_json::array();
            for (const auto& e : store_->session(id).events) events.push_back(to_json(e));
            return json_response(200, {{"session_id", id}, {"events", std::move(events)}});
        }
    }
    if (method == "GET" && std::regex_match(path, m, kSummaryPath)) {
        return json_response(200, to_json(store_->summary(m[1])));
    }
    return error_response(404, "not_found", "no route " + method + " " + path);
}

void ApiService::serve(const std::string& host, int port, const std::function<void(int)>& on_ready) {
    httplib::Server server;
    const auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
        const ApiResponse r = handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_content(r.body, "application/json");
    };
    server.Get(R"(/v1/.*)", dispatch);
    server.Post(R"(/v1/.*)", dispatch);
    server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });
    const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    server_.store(&server);
    if (on_ready) on_ready(bound);
    server.listen_after_bind();
    server_.store(nullptr);
}

void ApiService::stop() {
    if (auto* s = static_cast<httplib::Server*>(server_.load())) s->stop();
}

}  // namespace evicode
