#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <string>

#include "evicode/pipeline.hpp"
#include "evicode/session.hpp"

namespace evicode {

struct ApiResponse {
    int status = 200;
    std::string body;
};

/// Transport-independent request handling for the /v1 API. Bodies are JSON.
class ApiService {
public:
    ApiService(std::shared_ptr<const Engine> engine, std::shared_ptr<RecordStore> store);

    ApiResponse handle(const std::string& method, const std::string& path, const std::string& body);

    /// Blocks serving HTTP until stop() is called. `on_ready` receives the
    /// bound port (useful with port 0).
    void serve(const std::string& host, int port, const std::function<void(int)>& on_ready = {});
    void stop();

private:
    ApiResponse route(const std::string& method, const std::string& path, const std::string& body);

    std::shared_ptr<const Engine> engine_;
    std::shared_ptr<RecordStore> store_;
    std::atomic<void*> server_{nullptr};
};

}  // namespace evicode
