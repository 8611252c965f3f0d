#include "mutproxy/proxy.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <condition_variable>
#include <mutex>
#include <set>
#include <thread>

#include "mutproxy/document.hpp"
#include "mutproxy/errors.hpp"
#include "mutproxy/path.hpp"

namespace mutproxy {

std::string_view to_string(BodyFormat f) {
    switch (f) {
        case BodyFormat::Json: return "json";
        case BodyFormat::Xml: return "xml";
        case BodyFormat::Opaque: return "opaque";
    }
    return "?";
}

BodyFormat detect_body_format(const http::Headers& headers, std::string_view body) {
    if (auto ct = headers.get("Content-Type")) {
        std::string lower = *ct;
        std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
        if (lower.find("json") != std::string::npos) return BodyFormat::Json;
        if (lower.find("xml") != std::string::npos) return BodyFormat::Xml;
    }
    std::size_t i = 0;
    if (body.substr(0, 3) == "\xEF\xBB\xBF") i = 3;
    while (i < body.size() && (body[i] == ' ' || body[i] == '\t' || body[i] == '\r' || body[i] == '\n')) ++i;
    if (i == body.size()) return BodyFormat::Opaque;
    if (body[i] == '{' || body[i] == '[') return BodyFormat::Json;
    if (body[i] == '<') return BodyFormat::Xml;
    return BodyFormat::Opaque;
}

std::string decoded_body(const http::Response& r) {
    auto enc = r.headers.get("Content-Encoding");
    if (!enc) return r.body;
    return http::decode_content(r.body, *enc);
}

namespace {

bool body_allowed(std::string_view method, int status) {
    return method != "HEAD" && status >= 200 && status != 204 && status != 304;
}

// Drops hop-by-hop fields and anything the Connection header lists.
http::Headers end_to_end(const http::Headers& in) {
    std::vector<std::string> listed;
    for (const auto& h : in) {
        if (!http::iequals(h.name, "Connection")) continue;
        std::string_view v = h.value;
        while (!v.empty()) {
            auto comma = v.find(',');
            auto token = v.substr(0, comma);
            while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
            while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
            if (!token.empty()) listed.emplace_back(token);
            if (comma == std::string_view::npos) break;
            v.remove_prefix(comma + 1);
        }
    }
    http::Headers out;
    for (const auto& h : in) {
        if (http::is_hop_by_hop(h.name)) continue;
        if (std::any_of(listed.begin(), listed.end(), [&](const std::string& l) { return http::iequals(l, h.name); }))
            continue;
        out.add(h.name, h.value);
    }
    return out;
}

// Response as the client sees it: end-to-end headers and a Content-Length
// matching the buffered body.
http::Response for_client(http::Response r, std::string_view method) {
    auto length = r.headers.get("Content-Length");
    r.headers = end_to_end(r.headers);
    if (body_allowed(method, r.status)) {
        r.headers.set("Content-Length", std::to_string(r.body.size()));
    } else if (method == "HEAD" && length) {
        r.headers.set("Content-Length", *length);
    } else {
        r.headers.remove("Content-Length");
    }
    r.version = "HTTP/1.1";
    if (r.reason.empty()) r.reason = std::string(http::default_reason(r.status));
    return r;
}

http::Response synthetic(int status, std::string text) {
    http::Response r;
    r.status = status;
    r.reason = std::string(http::default_reason(status));
    r.headers.add("Content-Type", "text/plain; charset=utf-8");
    r.body = std::move(text);
    r.headers.add("Content-Length", std::to_string(r.body.size()));
    return r;
}

std::string apply_marker(const std::string& body, Format format, const MarkerProbe& marker) {
    auto tree = parse(body, format);
    auto path = FieldPath::parse(marker.path, format);
    Node* node = resolve(tree, path);
    if (!node) throw TargetNotFound(marker.path);
    switch (node->kind) {
        case NodeKind::String:
        case NodeKind::Attribute: node->text = marker.sentinel; break;
        case NodeKind::Element:
            if (std::any_of(node->children.begin(), node->children.end(),
                            [](const Node& c) { return c.kind == NodeKind::Element; }))
                throw TargetNotEligible(marker.path);
            node->children.clear();
            node->children.push_back(Node::text_node(marker.sentinel));
            break;
        default: throw TargetNotEligible(marker.path);
    }
    return serialize(tree);
}

}  // namespace

RewriteResult rewrite_response(const RewriteRule& rule, const CapturedExchange& baseline) {
    RewriteResult out;
    const auto& base = baseline.response;
    try {
        std::string body = decoded_body(base);
        const BodyFormat fmt = detect_body_format(base.headers, body);
        if (rule.marker) {
            if (fmt == BodyFormat::Opaque) throw NothingToMutate("marker probe needs a JSON or XML baseline");
            body = apply_marker(body, fmt == BodyFormat::Json ? Format::Json : Format::Xml, *rule.marker);
        }
        int status = base.status;
        if (rule.spec) {
            if (fmt == BodyFormat::Opaque && rule.spec->kind != MutationKind::EmptyResponse)
                throw NothingToMutate("baseline body is neither JSON nor XML");
            auto outcome = apply_mutation(body, fmt == BodyFormat::Xml ? Format::Xml : Format::Json, *rule.spec,
                                          base.status);
            body = std::move(outcome.body);
            status = outcome.status;
            out.applied = rule.spec;
        }
        http::Response r;
        r.status = status;
        r.reason = status == base.status ? base.reason : std::string(http::default_reason(status));
        r.headers = end_to_end(base.headers);
        r.headers.remove("Content-Encoding");
        r.headers.remove("Content-Length");
        r.headers.add("Content-Length", std::to_string(body.size()));
        r.body = std::move(body);
        out.response = std::move(r);
    } catch (const std::exception& e) {
        out.failure = e.what();
        out.applied.reset();
        out.response = for_client(base, "GET");
    }
    return out;
}

void bind_rules(RuleTable& rules, Session& session, EventBus* events) {
    rules.set_listener([&session, events](const RewriteRule& r, std::string_view change) {
        if (change == "deleted") session.drop_rule(r.rule_id);
        else session.put_rule(r);
        if (events) events->publish("rule-changed", {{"change", change}, {"rule", r}});
    });
}

namespace {

class Proxy final : public ProxyHandle {
public:
    Proxy(const ProxyConfig& cfg, Session& session, RuleTable& rules, EventBus* events)
        : cfg_(cfg), session_(session), rules_(rules), events_(events) {
        listener_ = http::listen_tcp(cfg.host, cfg.port);
        acceptor_ = std::thread([this] { accept_loop(); });
    }

    ~Proxy() override { stop(); }

    std::uint16_t port() const override { return listener_.port; }
    const std::string& host() const override { return listener_.host; }

    void stop() override {
        if (stopping_.exchange(true)) {
            if (acceptor_.joinable()) acceptor_.join();
            return;
        }
        listener_.socket.shutdown();
        if (acceptor_.joinable()) acceptor_.join();
        {
            std::unique_lock lock(mu_);
            for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
            idle_.wait(lock, [&] { return workers_ == 0; });
        }
        listener_.socket.close();
    }

private:
    // Keeps a descriptor registered so stop() can unblock the worker using it.
    class Tracked {
    public:
        Tracked(Proxy& p, int fd) : p_(p), fd_(fd) {
            std::lock_guard lock(p_.mu_);
            p_.open_fds_.insert(fd_);
            if (p_.stopping_) ::shutdown(fd_, SHUT_RDWR);
        }
        ~Tracked() {
            std::lock_guard lock(p_.mu_);
            p_.open_fds_.erase(fd_);
        }
        Tracked(const Tracked&) = delete;
        Tracked& operator=(const Tracked&) = delete;

    private:
        Proxy& p_;
        int fd_;
    };

    void accept_loop() {
        while (!stopping_) {
            auto client = http::accept_connection(listener_.socket);
            if (!client) {
                if (stopping_) break;
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
                continue;
            }
            {
                std::lock_guard lock(mu_);
                ++workers_;
            }
            std::thread([this, s = std::move(*client)]() mutable {
                try {
                    serve(s);
                } catch (const std::exception&) {
                    // Connection-level failure; the exchange, if any, was recorded.
                }
                s.close();
                std::lock_guard lock(mu_);
                if (--workers_ == 0) idle_.notify_all();
            }).detach();
        }
    }

    bool addresses_self(const http::Url& u) const {
        if (u.port != listener_.port) return false;
        return u.host == listener_.host || u.host == "localhost" || u.host == "127.0.0.1" || u.host == "::1";
    }

    void serve(http::Socket& client) {
        Tracked guard(*this, client.fd());
        http::Stream in(client);
        while (!stopping_) {
            std::optional<http::Request> req;
            try {
                req = http::read_request(in);
            } catch (const http::ProtocolError& e) {
                respond_bad_request(in, e.what());
                return;
            }
            if (!req) return;
            if (req->method == "CONNECT") {
                tunnel(client, in, *req);
                return;
            }
            if (!handle(in, *req)) return;
        }
    }

    void respond_bad_request(http::Stream& in, const std::string& why) {
        http::Request empty;
        empty.method = "";
        auto resp = synthetic(400, "bad request: " + why + "\n");
        resp.headers.add("Connection", "close");
        record(empty, resp, Origin::Upstream, std::nullopt, std::nullopt, [&](const http::Response& r) {
            in.write_all(http::serialize(r));
        });
    }

    // Appends the exchange before the client sees the response, so a
    // follow-up request on another connection always sees the rule state this
    // one produced. Returns the stored exchange.
    template <typename Writer>
    CapturedExchange record(const http::Request& req, const http::Response& resp, Origin origin,
                            std::optional<std::uint64_t> rule_id, std::optional<MutationSpec> mutation,
                            Writer&& write, std::optional<std::uint64_t> capture_rule = std::nullopt) {
        CapturedExchange ex;
        ex.request = req;
        ex.response = resp;
        ex.origin = origin;
        ex.rule_id = rule_id;
        ex.mutation = std::move(mutation);
        ex = session_.append(std::move(ex));
        if (capture_rule) rules_.try_capture(*capture_rule, ex.id);
        if (events_) {
            events_->publish("flow-recorded", {{"exchange_id", ex.id},
                                               {"method", ex.request.method},
                                               {"url", ex.request.target},
                                               {"status", ex.response.status},
                                               {"origin", to_string(ex.origin)},
                                               {"rule_id", rule_id ? nlohmann::json(*rule_id) : nlohmann::json()}});
        }
        try {
            write(resp);
        } catch (const std::exception&) {
            session_.mark_client_aborted(ex.id);
            throw;
        }
        return ex;
    }

    std::optional<http::Url> absolute_url(const http::Request& req) const {
        if (req.target.rfind("http://", 0) == 0 || req.target.rfind("HTTP://", 0) == 0) return http::Url::parse(req.target);
        if (req.target.empty() || req.target.front() != '/') return std::nullopt;
        auto host = req.headers.get("Host");
        if (!host || host->empty()) return std::nullopt;
        return http::Url::parse("http://" + *host + req.target);
    }

    http::Response forward(const http::Request& req, const http::Url& url) {
        try {
            auto upstream = http::connect_tcp(url.host, url.port, cfg_.upstream_timeout);
            Tracked guard(*this, upstream.fd());
            http::Request out;
            out.method = req.method;
            out.target = url.origin_form();
            out.version = "HTTP/1.1";
            out.headers = end_to_end(req.headers);
            if (!out.headers.has("Host")) out.headers.add("Host", url.authority());
            out.headers.remove("Content-Length");
            if (!req.body.empty() || req.headers.has("Content-Length") || req.headers.has("Transfer-Encoding"))
                out.headers.add("Content-Length", std::to_string(req.body.size()));
            out.headers.add("Connection", "close");
            out.body = req.body;
            http::Stream s(upstream);
            s.write_all(http::serialize(out));
            return http::read_response(s, req.method);
        } catch (const std::exception& e) {
            return synthetic(502, "upstream error: " + std::string(e.what()) + "\n");
        }
    }

    // Handles one request; false when the client connection should close.
    bool handle(http::Stream& in, http::Request req) {
        const bool keep = http::keep_alive(req);
        auto writer = [&](const http::Response& r) {
            http::Response w = r;
            if (!keep) w.headers.set("Connection", "close");
            else if (req.version == "HTTP/1.0") w.headers.set("Connection", "keep-alive");
            in.write_all(http::serialize(w));
        };

        auto url = absolute_url(req);
        if (!url) {
            record(req, for_client(synthetic(400, "request target is not an http URL\n"), req.method),
                   Origin::Upstream, std::nullopt, std::nullopt, writer);
            return keep;
        }
        req.target = url->str();
        if (addresses_self(*url)) {
            record(req, for_client(synthetic(400, "request addressed to the proxy itself\n"), req.method),
                   Origin::Upstream, std::nullopt, std::nullopt, writer);
            return keep;
        }

        auto key = RequestKey::from_url(req.method, req.target);
        auto rule = key ? match_rule(*key, *rules_.snapshot()) : std::nullopt;

        if (rule && rule->mode == RuleMode::Rewrite && rule->baseline_id) {
            if (auto baseline = session_.exchange(*rule->baseline_id)) {
                if (rule->forward_and_discard) forward(req, *url);
                auto result = rewrite_response(*rule, *baseline);
                if (result.failure && events_) {
                    events_->publish("mutation-failed",
                                     {{"rule_id", rule->rule_id}, {"error", *result.failure}, {"url", req.target}});
                }
                record(req, for_client(result.response, req.method), Origin::MutatedLocal, rule->rule_id,
                       result.applied, writer);
                return keep;
            }
        }

        auto resp = for_client(forward(req, *url), req.method);
        std::optional<std::uint64_t> capture;
        std::optional<std::uint64_t> rule_id;
        if (rule && rule->mode == RuleMode::CaptureNext && resp.status != 502) {
            capture = rule->rule_id;
            rule_id = rule->rule_id;
        }
        record(req, resp, Origin::Upstream, rule_id, std::nullopt, writer, capture);
        return keep;
    }

    void tunnel(http::Socket& client, http::Stream& in, http::Request req) {
        auto [host, port] = http::split_host_port(req.target, 443);
        http::Socket upstream;
        try {
            upstream = http::connect_tcp(host, port, cfg_.upstream_timeout);
        } catch (const std::exception& e) {
            auto resp = synthetic(502, "tunnel failed: " + std::string(e.what()) + "\n");
            resp.headers.add("Connection", "close");
            record(req, resp, Origin::Upstream, std::nullopt, std::nullopt,
                   [&](const http::Response& r) { in.write_all(http::serialize(r)); });
            return;
        }
        Tracked guard(*this, upstream.fd());
        http::Response established;
        established.status = 200;
        established.reason = "Connection Established";
        record(req, established, Origin::Upstream, std::nullopt, std::nullopt,
               [&](const http::Response& r) { in.write_all(http::serialize(r)); });
        upstream.set_timeout(std::chrono::milliseconds(0));
        client.set_timeout(std::chrono::milliseconds(0));

        auto send_all = [](int fd, const char* data, std::size_t n) {
            while (n > 0) {
                ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
                if (w <= 0) return false;
                data += w;
                n -= static_cast<std::size_t>(w);
            }
            return true;
        };
        std::string pending = in.take_buffered();
        if (!pending.empty() && !send_all(upstream.fd(), pending.data(), pending.size())) return;

        pollfd fds[2] = {{client.fd(), POLLIN, 0}, {upstream.fd(), POLLIN, 0}};
        char buf[16 * 1024];
        while (!stopping_) {
            if (::poll(fds, 2, 1000) < 0) {
                if (errno == EINTR) continue;
                return;
            }
            for (int k = 0; k < 2; ++k) {
                if (!(fds[k].revents & (POLLIN | POLLHUP | POLLERR))) continue;
                ssize_t n = ::recv(fds[k].fd, buf, sizeof buf, 0);
                if (n <= 0) return;
                if (!send_all(fds[1 - k].fd, buf, static_cast<std::size_t>(n))) return;
            }
        }
    }

    ProxyConfig cfg_;
    Session& session_;
    RuleTable& rules_;
    EventBus* events_;
    http::Listener listener_;
    std::thread acceptor_;
    std::atomic<bool> stopping_{false};
    std::mutex mu_;
    std::condition_variable idle_;
    std::set<int> open_fds_;
    int workers_ = 0;
};

}  // namespace

std::unique_ptr<ProxyHandle> start_proxy(const ProxyConfig& config, Session& session, RuleTable& rules,
                                         EventBus* events) {
    return std::make_unique<Proxy>(config, session, rules, events);
}

}  // namespace mutproxy
