#pragma once

// Test-only HTTP helpers: a scripted upstream server and proxy client calls.

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "mutproxy/http.hpp"

namespace testsupport {

namespace http = mutproxy::http;

inline std::string raw_response(int status, const std::vector<std::pair<std::string, std::string>>& headers,
                                const std::string& body, bool with_length = true) {
    std::string out = "HTTP/1.1 " + std::to_string(status) + " " + std::string(http::default_reason(status)) + "\r\n";
    for (const auto& [k, v] : headers) out += k + ": " + v + "\r\n";
    if (with_length) out += "Content-Length: " + std::to_string(body.size()) + "\r\n";
    out += "\r\n" + body;
    return out;
}

// Answers each connection's first request with handler's raw bytes, then
// closes the connection.
class Upstream {
public:
    using Handler = std::function<std::string(const http::Request&)>;

    explicit Upstream(Handler h) : handler_(std::move(h)), listener_(http::listen_tcp("127.0.0.1", 0)) {
        thread_ = std::thread([this] { loop(); });
    }

    ~Upstream() {
        stopping_ = true;
        listener_.socket.shutdown();
        thread_.join();
        std::lock_guard lock(mu_);
        for (auto& w : workers_) w.join();
    }

    std::uint16_t port() const { return listener_.port; }
    std::string url(const std::string& path_and_query) const {
        return "http://127.0.0.1:" + std::to_string(port()) + path_and_query;
    }
    int hits() const { return hits_; }
    std::vector<http::Request> requests() const {
        std::lock_guard lock(mu_);
        return seen_;
    }

private:
    void loop() {
        while (!stopping_) {
            auto s = http::accept_connection(listener_.socket);
            if (!s) break;
            std::lock_guard lock(mu_);
            workers_.emplace_back([this, sock = std::move(*s)]() mutable {
                try {
                    sock.set_timeout(std::chrono::seconds(10));
                    http::Stream io(sock);
                    auto req = http::read_request(io);
                    if (!req) return;
                    {
                        std::lock_guard l(mu_);
                        seen_.push_back(*req);
                    }
                    ++hits_;
                    io.write_all(handler_(*req));
                } catch (const std::exception&) {
                }
            });
        }
    }

    Handler handler_;
    http::Listener listener_;
    std::thread thread_;
    std::atomic<bool> stopping_{false};
    std::atomic<int> hits_{0};
    mutable std::mutex mu_;
    std::vector<std::thread> workers_;
    std::vector<http::Request> seen_;
};

inline http::Request get(const std::string& absolute_url, const std::string& method = "GET") {
    http::Request r;
    r.method = method;
    r.target = absolute_url;
    auto u = http::Url::parse(absolute_url);
    if (u) r.headers.add("Host", u->authority());
    r.headers.add("Connection", "close");
    return r;
}

inline http::Response via(std::uint16_t proxy_port, const http::Request& r) {
    return http::round_trip("127.0.0.1", proxy_port, r, std::chrono::seconds(10));
}

}  // namespace testsupport
