#include "mutproxy/control.hpp"

#include <fstream>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "mutproxy/detectors.hpp"
#include "mutproxy/errors.hpp"
#include "mutproxy/report.hpp"

namespace mutproxy {

using nlohmann::json;

namespace {

constexpr std::size_t kDefaultPage = 100;
constexpr std::size_t kMaxPage = 1000;

const char* kPlaceholderPage = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>mutproxy</title></head>
<body><p>No dashboard bundle is installed. Start the service with a ui_dir to serve one.</p>
<p>Control API: <code>/__control/v1/</code></p></body></html>
)";

int status_for(const std::exception& e) {
    if (dynamic_cast<const UnknownRule*>(&e) || dynamic_cast<const UnknownExchange*>(&e)) return 404;
    if (dynamic_cast<const IllegalTransition*>(&e) || dynamic_cast<const NotMutated*>(&e) ||
        dynamic_cast<const NoBaseline*>(&e) || dynamic_cast<const InsufficientEvidence*>(&e))
        return 409;
    if (dynamic_cast<const InvalidSpec*>(&e) || dynamic_cast<const InvalidPath*>(&e) ||
        dynamic_cast<const MutationError*>(&e) || dynamic_cast<const json::exception*>(&e))
        return 400;
    return 500;
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(-1, ' ', false, json::error_handler_t::replace) + "\n", "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"type", "error"}, {"status", status}, {"error", message}});
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::parse_error& e) {
        throw InvalidSpec(std::string("malformed JSON body: ") + e.what());
    }
}

std::uint64_t id_param(const httplib::Request& req, std::size_t i = 1) {
    try {
        return std::stoull(req.matches[static_cast<int>(i)].str());
    } catch (const std::exception&) {
        throw InvalidSpec("bad id");
    }
}

std::size_t size_param(const httplib::Request& req, const std::string& name, std::size_t fallback) {
    if (!req.has_param(name)) return fallback;
    const auto text = req.get_param_value(name);
    if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos)
        throw InvalidSpec(name + " must be a non-negative integer");
    try {
        return static_cast<std::size_t>(std::stoull(text));
    } catch (const std::exception&) {
        throw InvalidSpec(name + " out of range");
    }
}

json items(std::string_view type, std::string_view item_type, const auto& values) {
    json list = json::array();
    for (const auto& v : values) list.push_back(make_record(item_type, json(v)));
    return {{"type", type}, {"items", std::move(list)}};
}

std::optional<bool> optional_bool(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_boolean()) throw InvalidSpec(std::string(key) + " must be a boolean");
    return j[key].get<bool>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* what) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw InvalidSpec(std::string("unknown ") + what + " field: " + key);
    }
}

std::string sse_frame(const Event& e) {
    return "id: " + std::to_string(e.id) + "\nevent: " + e.type + "\ndata: " +
           e.record().dump(-1, ' ', false, json::error_handler_t::replace) + "\n\n";
}

}  // namespace

struct ControlServer::Impl {
    Impl(const ControlConfig& c, ControlContext x) : ctx(x), token("Bearer " + c.token) {}

    ControlContext ctx;
    std::string token;
    httplib::Server server;
    std::thread thread;
    std::atomic<bool> stopping{false};
    // Writers hold it across the change and its event, readers while they
    // build a response, so an event is never later than the state it reports.
    std::shared_mutex state;

    using Body = std::function<void(const httplib::Request&, httplib::Response&)>;

    httplib::Server::Handler guarded(Body f) {
        return [f = std::move(f)](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const std::exception& e) {
                send_error(res, status_for(e), e.what());
            }
        };
    }

    httplib::Server::Handler reader(Body f) {
        return guarded([this, f = std::move(f)](const httplib::Request& req, httplib::Response& res) {
            std::shared_lock lock(state);
            f(req, res);
        });
    }

    httplib::Server::Handler writer(Body f) {
        return guarded([this, f = std::move(f)](const httplib::Request& req, httplib::Response& res) {
            std::unique_lock lock(state);
            f(req, res);
        });
    }

    std::string route(const char* suffix) const { return std::string(kControlPrefix) + suffix; }

    void install(const ControlConfig& config);
    void flows();
    void rules();
    void observations();
    void profiles();
    void report();
    void events();
    void campaigns();
    void ui(const ControlConfig& config);
};

void ControlServer::Impl::install(const ControlConfig& config) {
    server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
        if (req.path.rfind(kControlPrefix, 0) != 0) return httplib::Server::HandlerResponse::Unhandled;
        if (req.get_header_value("Authorization") != token) {
            res.set_header("WWW-Authenticate", "Bearer");
            send_error(res, 401, "missing or incorrect bearer token");
            return httplib::Server::HandlerResponse::Handled;
        }
        return httplib::Server::HandlerResponse::Unhandled;
    });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) send_error(res, res.status, std::string(httplib::status_message(res.status)));
    });
    flows();
    rules();
    observations();
    profiles();
    report();
    events();
    campaigns();
    ui(config);
}

void ControlServer::Impl::flows() {
    server.Get(route("/flows"), reader([this](const httplib::Request& req, httplib::Response& res) {
        const auto offset = size_param(req, "offset", 0);
        const auto limit = std::min(size_param(req, "limit", kDefaultPage), kMaxPage);
        auto page = ctx.session.exchanges(offset, limit);
        auto body = items("flows", "exchange", page);
        body["offset"] = offset;
        body["limit"] = limit;
        body["total"] = ctx.session.exchange_count();
        send_json(res, 200, body);
    }));
    server.Get(route(R"(/flows/(\d+))"), reader([this](const httplib::Request& req, httplib::Response& res) {
        const auto id = id_param(req);
        auto e = ctx.session.exchange(id);
        if (!e) throw UnknownExchange(id);
        send_json(res, 200, make_record("exchange", *e));
    }));
}

void ControlServer::Impl::rules() {
    server.Get(route("/rules"), reader([this](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, items("rules", "rule", ctx.rules.list()));
    }));
    server.Get(route(R"(/rules/(\d+))"), reader([this](const httplib::Request& req, httplib::Response& res) {
        const auto id = id_param(req);
        auto r = ctx.rules.get(id);
        if (!r) throw UnknownRule(id);
        send_json(res, 200, make_record("rule", *r));
    }));
    server.Post(route("/rules"), writer([this](const httplib::Request& req, httplib::Response& res) {
        auto rule = record_body(parse_body(req), "rule").get<RewriteRule>();
        if (rule.rule_id != 0) throw InvalidSpec("rule_id is assigned by the server");
        send_json(res, 201, make_record("rule", ctx.rules.add(std::move(rule))));
    }));
    server.Patch(route(R"(/rules/(\d+))"), writer([this](const httplib::Request& req, httplib::Response& res) {
        const auto id = id_param(req);
        const auto patch = record_body(parse_body(req), "rule");
        if (patch.contains("rule_id") && patch["rule_id"] != id) throw InvalidSpec("rule_id cannot change");
        auto updated = ctx.rules.update(id, [&](RewriteRule& r) {
            json merged = r;
            for (const auto& [key, value] : patch.items()) merged[key] = value;
            r = merged.get<RewriteRule>();
        });
        send_json(res, 200, make_record("rule", updated));
    }));
    server.Delete(route(R"(/rules/(\d+))"), writer([this](const httplib::Request& req, httplib::Response& res) {
        ctx.rules.remove(id_param(req));
        res.status = 204;
    }));
    server.Post(route(R"(/rules/(\d+)/capture-next)"),
                writer([this](const httplib::Request& req, httplib::Response& res) {
                    const auto body = parse_body(req);
                    reject_unknown(body, {"rewrite_after_capture"}, "capture-next");
                    const auto after = optional_bool(body, "rewrite_after_capture");
                    auto updated = ctx.rules.update(id_param(req), [&](RewriteRule& r) {
                        r.mode = RuleMode::CaptureNext;
                        r.enabled = true;
                        if (after) r.rewrite_after_capture = *after;
                    });
                    send_json(res, 200, make_record("rule", updated));
                }));
}

void ControlServer::Impl::observations() {
    server.Get(route("/observations"), reader([this](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, items("observations", "observation", ctx.session.observations()));
    }));
    server.Post(route("/observations"), writer([this](const httplib::Request& req, httplib::Response& res) {
        const auto body = record_body(parse_body(req), "observation");
        reject_unknown(body, {"exchange_id", "behavior", "note"}, "observation");
        if (!body.contains("exchange_id") || !body.contains("behavior"))
            throw InvalidSpec("observation needs exchange_id and behavior");
        auto o = record_observation(ctx.session, body["exchange_id"].get<std::uint64_t>(),
                                    behavior_from_string(body["behavior"].get<std::string>()),
                                    body.value("note", std::string()));
        auto record = make_record("observation", o);
        ctx.events.publish("observation-recorded", record);
        send_json(res, 201, record);
    }));
}

void ControlServer::Impl::profiles() {
    server.Get(route("/profiles"), reader([this](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, items("profiles", "profile", ctx.session.profiles()));
    }));
    server.Patch(route("/profiles/([^/]+)"), writer([this](const httplib::Request& req, httplib::Response& res) {
        const auto name = httplib::detail::decode_url(req.matches[1].str(), false);
        const auto patch = record_body(parse_body(req), "profile");
        if (patch.contains("target_name") && patch["target_name"] != name)
            throw InvalidSpec("target_name cannot change");
        TargetProfile current{name, CachingKind::Unknown, {}, ""};
        if (auto p = ctx.session.profile(name)) current = *p;
        json merged = current;
        for (const auto& [key, value] : patch.items()) merged[key] = value;
        auto updated = merged.get<TargetProfile>();
        ctx.session.put_profile(updated);
        auto record = make_record("profile", updated);
        ctx.events.publish("profile-changed", record);
        send_json(res, 200, record);
    }));
    // Runs both detectors for one endpoint and stores what they settle.
    server.Post(route("/profiles/([^/]+)/assess"), writer([this](const httplib::Request& req,
                                                                  httplib::Response& res) {
        const auto name = httplib::detail::decode_url(req.matches[1].str(), false);
        const auto body = parse_body(req);
        reject_unknown(body, {"matcher", "marker_visible", "cleared_on_restart", "window_seconds"}, "assessment");
        if (!body.contains("matcher")) throw InvalidSpec("assessment needs a matcher");
        const auto matcher = body["matcher"].get<EndpointMatcher>();
        CachingEvidence evidence{optional_bool(body, "marker_visible"), optional_bool(body, "cleared_on_restart")};
        const double window = body.value("window_seconds", 30.0);
        if (!(window > 0)) throw InvalidSpec("window_seconds must be positive");

        const auto data = ctx.session.data();
        TargetProfile profile{name, CachingKind::Unknown, {}, ""};
        if (auto p = ctx.session.profile(name)) profile = *p;
        for (auto it = data.exchanges.rbegin(); it != data.exchanges.rend(); ++it) {
            auto key = RequestKey::from_url(it->request.method, it->request.target);
            if (key && matcher.matches(*key)) {
                profile.versioning = detect_versioning(it->request.target, it->request.headers, it->response.headers);
                break;
            }
        }
        auto verdict = assess_caching(data, matcher, evidence,
                                      std::chrono::milliseconds(static_cast<std::int64_t>(window * 1000)));
        if (verdict.confidence == Confidence::Confirmed) profile.caching = verdict.kind;
        ctx.session.put_profile(profile);
        auto record = make_record("profile", profile);
        ctx.events.publish("profile-changed", record);
        send_json(res, 200,
                  {{"type", "assessment"},
                   {"profile", record},
                   {"caching",
                    {{"kind", to_string(verdict.kind)},
                     {"confidence", to_string(verdict.confidence)},
                     {"reason", verdict.reason}}}});
    }));
}

void ControlServer::Impl::report() {
    server.Get(route("/report"), reader([this](const httplib::Request& req, httplib::Response& res) {
        const auto format = report_format_from_string(req.has_param("format") ? req.get_param_value("format") : "plain");
        const auto text = render_report(aggregate(ctx.session.data()), format);
        const char* type = format == ReportFormat::Machine    ? "application/json"
                           : format == ReportFormat::Markdown ? "text/markdown; charset=utf-8"
                                                              : "text/plain; charset=utf-8";
        res.status = 200;
        res.set_content(text, type);
    }));
}

void ControlServer::Impl::events() {
    server.Get(route("/events"), guarded([this](const httplib::Request& req, httplib::Response& res) {
        std::uint64_t after = 0;
        if (req.has_header("Last-Event-ID")) after = std::stoull(req.get_header_value("Last-Event-ID"));
        if (req.has_param("after")) after = size_param(req, "after", 0);
        const bool follow = !req.has_param("follow") || req.get_param_value("follow") != "0";
        res.set_header("Cache-Control", "no-cache");
        if (!follow) {
            std::string out;
            for (const auto& e : ctx.events.since(after)) out += sse_frame(e);
            res.set_content(out, "text/event-stream");
            return;
        }
        auto cursor = std::make_shared<std::uint64_t>(after);
        auto idle = std::make_shared<int>(0);
        res.set_chunked_content_provider("text/event-stream", [this, cursor, idle](std::size_t,
                                                                                   httplib::DataSink& sink) {
            if (stopping) {
                sink.done();
                return true;
            }
            auto batch = ctx.events.wait_after(*cursor, std::chrono::milliseconds(250));
            std::string out;
            for (const auto& e : batch) {
                out += sse_frame(e);
                *cursor = e.id;
            }
            if (out.empty() && ++*idle >= 40) out = ": keepalive\n\n";
            if (!out.empty()) {
                *idle = 0;
                return sink.write(out.data(), out.size());
            }
            return sink.is_writable();
        });
    }));
}

void ControlServer::Impl::campaigns() {
    server.Get(route("/campaigns"), reader([this](const httplib::Request&, httplib::Response& res) {
        json list = json::array();
        for (const auto& run : ctx.campaigns.list()) list.push_back(make_record("campaign", run->status()));
        send_json(res, 200, {{"type", "campaigns"}, {"items", list}});
    }));
    server.Get(route(R"(/campaigns/(\d+))"), reader([this](const httplib::Request& req, httplib::Response& res) {
        auto run = ctx.campaigns.get(id_param(req));
        if (!run) {
            send_error(res, 404, "unknown campaign");
            return;
        }
        send_json(res, 200, make_record("campaign", run->status()));
    }));
    server.Post(route("/campaigns"), writer([this](const httplib::Request& req, httplib::Response& res) {
        auto plan = record_body(parse_body(req), "campaign_plan").get<CampaignPlan>();
        auto run = ctx.campaigns.start(std::move(plan));
        send_json(res, 201, make_record("campaign", run->status()));
    }));
    server.Delete(route(R"(/campaigns/(\d+))"), writer([this](const httplib::Request& req, httplib::Response& res) {
        auto run = ctx.campaigns.get(id_param(req));
        if (!run) {
            send_error(res, 404, "unknown campaign");
            return;
        }
        run->cancel();
        send_json(res, 200, make_record("campaign", run->status()));
    }));
}

void ControlServer::Impl::ui(const ControlConfig& config) {
    server.Get(kUiPrefix, [](const httplib::Request&, httplib::Response& res) {
        res.set_redirect(std::string(kUiPrefix) + "/");
    });
    if (config.ui_dir) {
        if (!server.set_mount_point(std::string(kUiPrefix) + "/", config.ui_dir->string()))
            throw InvalidSpec("ui_dir is not a directory: " + config.ui_dir->string());
        return;
    }
    server.Get(std::string(kUiPrefix) + "/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(kPlaceholderPage, "text/html; charset=utf-8");
    });
}

ControlServer::ControlServer(const ControlConfig& config, ControlContext ctx)
    : config_(config), impl_(std::make_unique<Impl>(config, ctx)) {
    if (config.token.empty()) throw InvalidSpec("control API needs a bearer token");
    impl_->install(config);
    if (config.port == 0) {
        const int p = impl_->server.bind_to_any_port(config.host);
        if (p <= 0) throw BindFailure("cannot bind control API on " + config.host);
        port_ = static_cast<std::uint16_t>(p);
    } else {
        if (!impl_->server.bind_to_port(config.host, config.port))
            throw BindFailure("cannot bind control API on " + config.host + ":" + std::to_string(config.port));
        port_ = config.port;
    }
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    // stop() is a no-op until the listen loop runs.
    impl_->server.wait_until_ready();
}

ControlServer::~ControlServer() { stop(); }

void ControlServer::stop() {
    if (impl_->stopping.exchange(true)) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

// ---------------------------------------------------------------------------
// Service

ServiceConfig ServiceConfig::from_json(const json& j) {
    if (!j.is_object()) throw InvalidSpec("config must be a JSON object");
    reject_unknown(j, {"listen", "control_listen", "control_token", "session_path", "upstream_timeout_seconds", "ui_dir"},
                   "config");
    ServiceConfig c;
    try {
        c.listen = j.value("listen", c.listen);
        c.control_listen = j.value("control_listen", c.control_listen);
        c.control_token = j.value("control_token", c.control_token);
        if (j.contains("session_path")) c.session_path = j["session_path"].get<std::string>();
        if (j.contains("ui_dir")) c.ui_dir = j["ui_dir"].get<std::string>();
        c.upstream_timeout_seconds = j.value("upstream_timeout_seconds", c.upstream_timeout_seconds);
    } catch (const json::exception& e) {
        throw InvalidSpec(std::string("bad config: ") + e.what());
    }
    if (!(c.upstream_timeout_seconds > 0)) throw InvalidSpec("upstream_timeout_seconds must be positive");
    return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw InvalidSpec("config " + path.string() + " is not valid JSON: " + e.what());
    }
}

namespace {

SessionData initial_data(const ServiceConfig& c) {
    if (c.session_path && std::filesystem::exists(*c.session_path)) return import_session(*c.session_path);
    return {};
}

}  // namespace

Service::Service(const ServiceConfig& config)
    : session_(initial_data(config)), campaigns_(session_, rules_, &events_) {
    rules_.restore(session_.rules());
    bind_rules(rules_, session_, &events_);
    if (config.session_path) session_.open_journal(*config.session_path);

    ProxyConfig pc;
    std::tie(pc.host, pc.port) = http::split_host_port(config.listen, 8080);
    pc.upstream_timeout = std::chrono::milliseconds(static_cast<std::int64_t>(config.upstream_timeout_seconds * 1000));
    ControlConfig cc;
    std::tie(cc.host, cc.port) = http::split_host_port(config.control_listen, 8081);
    cc.token = config.control_token;
    cc.ui_dir = config.ui_dir;

    proxy_ = start_proxy(pc, session_, rules_, &events_);
    control_ = std::make_unique<ControlServer>(cc, ControlContext{session_, rules_, events_, campaigns_});
}

Service::~Service() { stop(); }

void Service::stop() {
    campaigns_.cancel_all();
    if (control_) control_->stop();
    if (proxy_) proxy_->stop();
    events_.close();
}

}  // namespace mutproxy
