#include "evicode/line_client.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "evicode/error.hpp"

namespace evicode {

namespace {

class Socket {
public:
    explicit Socket(int fd) : fd_(fd) {}
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket() {
        if (fd_ >= 0) ::close(fd_);
    }
    int get() const noexcept { return fd_; }

private:
    int fd_;
};

int remaining_ms(std::chrono::steady_clock::time_point deadline) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    return left.count() > 0 ? static_cast<int>(left.count()) : 0;
}

void wait_for(int fd, short events, std::chrono::steady_clock::time_point deadline, const std::string& endpoint) {
    pollfd p{fd, events, 0};
    for (;;) {
        const int rc = ::poll(&p, 1, remaining_ms(deadline));
        if (rc > 0) return;
        if (rc == 0) throw Error("timed out talking to " + endpoint);
        if (errno != EINTR) throw Error("poll failed for " + endpoint + ": " + std::strerror(errno));
    }
}

int connect_unix(const std::string& path) {
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (path.size() >= sizeof(addr.sun_path)) throw ConfigError("socket path too long: " + path);
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0) throw Error("socket() failed");
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        const int err = errno;
        ::close(fd);
        throw Error("cannot connect to unix:" + path + ": " + std::strerror(err));
    }
    return fd;
}

int connect_tcp(const std::string& host, const std::string& port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0 || res == nullptr) {
        throw Error("cannot resolve " + host + ":" + port);
    }
    int fd = -1;
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw Error("cannot connect to " + host + ":" + port);
    return fd;
}

}  // namespace

LineClient::LineClient(std::string endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {
    if (endpoint_.empty()) throw ConfigError("empty service endpoint");
}

std::string LineClient::exchange(std::string_view request) const {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    int fd = -1;
    if (endpoint_.rfind("unix:", 0) == 0) {
        fd = connect_unix(endpoint_.substr(5));
    } else {
        std::string hostport = endpoint_;
        if (hostport.rfind("tcp://", 0) == 0) hostport = hostport.substr(6);
        const auto colon = hostport.rfind(':');
        if (colon == std::string::npos) throw ConfigError("endpoint '" + endpoint_ + "' lacks a port");
        fd = connect_tcp(hostport.substr(0, colon), hostport.substr(colon + 1));
    }
    Socket sock(fd);

    std::string payload(request);
    payload.push_back('\n');
    std::size_t sent = 0;
    while (sent < payload.size()) {
        wait_for(sock.get(), POLLOUT, deadline, endpoint_);
        const ssize_t n = ::send(sock.get(), payload.data() + sent, payload.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error("send to " + endpoint_ + " failed: " + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }

    std::string reply;
    char buf[4096];
    for (;;) {
        wait_for(sock.get(), POLLIN, deadline, endpoint_);
        const ssize_t n = ::recv(sock.get(), buf, sizeof buf, 0);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error("recv from " + endpoint_ + " failed: " + std::strerror(errno));
        }
        if (n == 0) break;
        reply.append(buf, static_cast<std::size_t>(n));
        if (auto nl = reply.find('\n'); nl != std::string::npos) {
            reply.resize(nl);
            return reply;
        }
    }
    if (reply.empty()) throw Error("connection to " + endpoint_ + " closed without a reply");
    return reply;
}

}  // namespace evicode
