#pragma once

// The intercepting HTTP/1.1 proxy.

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "mutproxy/events.hpp"
#include "mutproxy/http.hpp"
#include "mutproxy/rules.hpp"
#include "mutproxy/session.hpp"

namespace mutproxy {

enum class BodyFormat { Json, Xml, Opaque };
std::string_view to_string(BodyFormat f);

// Content-Type first (json / xml), then the first non-whitespace byte.
BodyFormat detect_body_format(const http::Headers& headers, std::string_view body);

struct RewriteResult {
    http::Response response;
    // Set when the mutation could not be applied and the baseline was served.
    std::optional<std::string> failure;
    std::optional<MutationSpec> applied;
};

// Builds the response for a Rewrite rule from its baseline exchange. Never
// throws for mutation problems: those fall back to the baseline.
RewriteResult rewrite_response(const RewriteRule& rule, const CapturedExchange& baseline);

// The baseline a rule would mutate, decoded to identity encoding.
std::string decoded_body(const http::Response& r);

struct ProxyConfig {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
    std::chrono::milliseconds upstream_timeout{30000};
};

class ProxyHandle {
public:
    virtual ~ProxyHandle() = default;
    virtual std::uint16_t port() const = 0;
    virtual const std::string& host() const = 0;
    // Closes the listener and every open connection, then waits for workers.
    virtual void stop() = 0;
};

// Throws BindFailure.
std::unique_ptr<ProxyHandle> start_proxy(const ProxyConfig& config, Session& session, RuleTable& rules,
                                         EventBus* events = nullptr);

// Mirrors every rule change into the session and onto the event stream.
void bind_rules(RuleTable& rules, Session& session, EventBus* events);

}  // namespace mutproxy
