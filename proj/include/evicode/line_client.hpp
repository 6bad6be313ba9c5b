#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace evicode {

/// Client for newline-delimited JSON services reached over a local socket.
///
/// Endpoints are `tcp://host:port`, `host:port`, or `unix:/path/to/socket`.
/// Each call opens a connection, writes one line, and reads one line back, so
/// a single client may be used from several threads at once.
class LineClient {
public:
    LineClient(std::string endpoint, std::chrono::milliseconds timeout);

    /// Sends `request` (newline appended) and returns the reply without its
    /// trailing newline. Throws Error on I/O failure or timeout.
    std::string exchange(std::string_view request) const;

    const std::string& endpoint() const noexcept { return endpoint_; }

private:
    std::string endpoint_;
    std::chrono::milliseconds timeout_;
};

}  // namespace evicode
