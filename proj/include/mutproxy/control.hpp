#pragma once

// HTTP control API under /__control/v1/ and the service that wires a proxy,
// a session and the control API together.
//
// Bodies are session-file records ({"type":"rule",...}). Collections come
// back as {"type":"<name>","items":[records...]}, errors as
// {"type":"error","status":..,"error":".."}. Every request needs
// "Authorization: Bearer <token>". /events is a text/event-stream whose
// data lines are Event::record() objects.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>

#include "mutproxy/campaign.hpp"
#include "mutproxy/events.hpp"
#include "mutproxy/proxy.hpp"
#include "mutproxy/rules.hpp"
#include "mutproxy/session.hpp"

namespace mutproxy {

inline constexpr const char* kControlPrefix = "/__control/v1";
inline constexpr const char* kUiPrefix = "/__control/ui";

struct ControlConfig {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
    std::string token;
    // Served under /__control/ui/; a placeholder page when unset.
    std::optional<std::filesystem::path> ui_dir;
};

struct ControlContext {
    Session& session;
    RuleTable& rules;
    EventBus& events;
    CampaignManager& campaigns;
};

class ControlServer {
public:
    // Throws BindFailure, InvalidSpec for an empty token.
    ControlServer(const ControlConfig& config, ControlContext ctx);
    ~ControlServer();
    ControlServer(const ControlServer&) = delete;
    ControlServer& operator=(const ControlServer&) = delete;

    std::uint16_t port() const { return port_; }
    const std::string& host() const { return config_.host; }
    void stop();

private:
    struct Impl;
    ControlConfig config_;
    std::uint16_t port_ = 0;
    std::unique_ptr<Impl> impl_;
};

// Keys of the --config file (JSON object); all optional.
struct ServiceConfig {
    std::string listen = "127.0.0.1:8080";
    std::string control_listen = "127.0.0.1:8081";
    std::string control_token;
    std::optional<std::filesystem::path> session_path;
    double upstream_timeout_seconds = 30;
    std::optional<std::filesystem::path> ui_dir;

    // Unknown keys and wrong types throw InvalidSpec.
    static ServiceConfig from_json(const nlohmann::json& j);
    static ServiceConfig load(const std::filesystem::path& path);
};

// Proxy + control API over one session. An existing session file is loaded
// and then journaled to.
class Service {
public:
    explicit Service(const ServiceConfig& config);
    ~Service();

    Session& session() { return session_; }
    RuleTable& rules() { return rules_; }
    EventBus& events() { return events_; }
    CampaignManager& campaigns() { return campaigns_; }
    std::uint16_t proxy_port() const { return proxy_->port(); }
    std::uint16_t control_port() const { return control_->port(); }
    void stop();

private:
    Session session_;
    RuleTable rules_;
    EventBus events_;
    CampaignManager campaigns_;
    std::unique_ptr<ProxyHandle> proxy_;
    std::unique_ptr<ControlServer> control_;
};

}  // namespace mutproxy
