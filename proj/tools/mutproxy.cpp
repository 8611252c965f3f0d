// Command-line entry point: the service itself plus thin clients of its
// control API. Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>
#include <httplib.h>

#include <csignal>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "mutproxy/control.hpp"
#include "mutproxy/errors.hpp"
#include "mutproxy/report.hpp"

using namespace mutproxy;
using nlohmann::json;

namespace {

// Bad input from the command line or its files.
class UsageError : public Error {
public:
    using Error::Error;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read " + path);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

json parse_json_file(const std::string& path) {
    try {
        return json::parse(slurp(path));
    } catch (const json::parse_error& e) {
        throw UsageError(path + " is not valid JSON: " + e.what());
    }
}

std::string random_token() {
    std::random_device rd;
    std::ostringstream out;
    for (int i = 0; i < 4; ++i) out << std::hex << rd();
    return out.str();
}

// Blocks until SIGINT or SIGTERM. The signals must already be blocked.
void wait_for_signal() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    int sig = 0;
    sigwait(&set, &sig);
}

void block_signals() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
}

struct ControlClient {
    std::string address = "127.0.0.1:8081";
    std::string token;

    json call(const std::string& method, const std::string& path, const std::optional<json>& body = {}) const {
        auto [host, port] = http::split_host_port(address, 8081);
        httplib::Client client(host, port);
        client.set_connection_timeout(5);
        client.set_read_timeout(30);
        client.set_bearer_token_auth(token);
        const std::string url = std::string(kControlPrefix) + path;
        const std::string payload = body ? body->dump() : "";
        httplib::Result res;
        if (method == "GET") res = client.Get(url);
        else if (method == "POST") res = client.Post(url, payload, "application/json");
        else if (method == "PATCH") res = client.Patch(url, payload, "application/json");
        else res = client.Delete(url);
        if (!res) throw Error("control API at " + address + " unreachable: " + httplib::to_string(res.error()));
        json out = res->body.empty() ? json() : json::parse(res->body, nullptr, false);
        if (res->status >= 400) {
            std::string message = out.is_object() ? out.value("error", res->body) : res->body;
            if (res->status == 400) throw UsageError(message);
            throw Error("control API returned " + std::to_string(res->status) + ": " + message);
        }
        return out;
    }
};

void add_client_options(CLI::App* cmd, ControlClient& c) {
    cmd->add_option("--control", c.address, "Control API host:port");
    cmd->add_option("--token", c.token, "Bearer token (default: $MUTPROXY_TOKEN)")->envname("MUTPROXY_TOKEN");
}

struct MatcherOptions {
    std::string host, path, method;
    std::vector<std::string> query;
    std::string target_name;

    EndpointMatcher matcher() const {
        EndpointMatcher m;
        m.host = host;
        m.path = path;
        if (!method.empty()) m.method = method;
        for (const auto& kv : query) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) throw UsageError("--query expects key=value: " + kv);
            m.include_query_keys[kv.substr(0, eq)] = kv.substr(eq + 1);
        }
        return m;
    }
};

void add_matcher_options(CLI::App* cmd, MatcherOptions& m) {
    cmd->add_option("--host", m.host, "Endpoint host[:port]")->required();
    cmd->add_option("--path", m.path, "Endpoint path")->required();
    cmd->add_option("--method", m.method, "Only this request method");
    cmd->add_option("--query", m.query, "Required query key=value (repeatable)");
    cmd->add_option("--target-name", m.target_name, "Name the findings are reported under");
}

void print_record(const json& j) { std::cout << j.dump() << "\n"; }

// Newest 2xx upstream exchange for the matcher, scanning pages from the end.
std::optional<std::uint64_t> find_baseline(const ControlClient& c, const EndpointMatcher& m) {
    auto first = c.call("GET", "/flows?limit=1");
    std::size_t end = first["total"].get<std::size_t>();
    const std::size_t page = 500;
    while (end > 0) {
        const std::size_t offset = end > page ? end - page : 0;
        auto flows = c.call("GET", "/flows?offset=" + std::to_string(offset) + "&limit=" + std::to_string(end - offset));
        const auto& list = flows["items"];
        for (auto it = list.rbegin(); it != list.rend(); ++it) {
            auto e = record_body(*it, "exchange").get<CapturedExchange>();
            auto key = RequestKey::from_url(e.request.method, e.request.target);
            if (e.origin == Origin::Upstream && e.response.status >= 200 && e.response.status < 300 && key &&
                m.matches(*key))
                return e.id;
        }
        end = offset;
    }
    return std::nullopt;
}

std::optional<RewriteRule> rule_for(const ControlClient& c, const EndpointMatcher& m) {
    const auto rules = c.call("GET", "/rules");
    for (const auto& item : rules["items"]) {
        auto r = record_body(item, "rule").get<RewriteRule>();
        if (r.matcher == m) return r;
    }
    return std::nullopt;
}

int cmd_serve(ServiceConfig cfg, const std::string& config_path, const CLI::App& cmd) {
    if (!config_path.empty()) {
        auto file = ServiceConfig::load(config_path);
        // Command-line flags win over the file.
        if (cmd.count("--listen") == 0) cfg.listen = file.listen;
        if (cmd.count("--control-listen") == 0) cfg.control_listen = file.control_listen;
        if (cmd.count("--token") == 0) cfg.control_token = file.control_token;
        if (cmd.count("--session") == 0) cfg.session_path = file.session_path;
        if (cmd.count("--upstream-timeout") == 0) cfg.upstream_timeout_seconds = file.upstream_timeout_seconds;
        if (cmd.count("--ui-dir") == 0) cfg.ui_dir = file.ui_dir;
    }
    bool generated = false;
    if (cfg.control_token.empty()) {
        cfg.control_token = random_token();
        generated = true;
    }
    block_signals();
    Service service(cfg);
    const auto proxy_host = http::split_host_port(cfg.listen, 8080).first;
    const auto control_host = http::split_host_port(cfg.control_listen, 8081).first;
    std::cout << "proxy listening on " << proxy_host << ":" << service.proxy_port() << "\n"
              << "control listening on " << control_host << ":" << service.control_port() << "\n";
    if (generated) std::cout << "control token " << cfg.control_token << "\n";
    std::cout << std::flush;
    wait_for_signal();
    service.stop();
    return 0;
}

MutationSpec spec_from(const std::string& kind, const std::vector<std::string>& targets, std::uint32_t level,
                       std::uint32_t count, std::optional<int> status, std::uint64_t seed) {
    MutationSpec s;
    try {
        s.kind = mutation_kind_from_string(kind);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    // Round-trip through the canonical encoding so paths are validated.
    s.targets = targets;
    s.escalation_level = level;
    s.added_count = count;
    s.status_override = status;
    s.seed = seed;
    try {
        return json(s).get<MutationSpec>();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
}

int cmd_mutate(const ControlClient& c, const MatcherOptions& mo, const MutationSpec& spec) {
    const auto m = mo.matcher();
    const auto baseline = find_baseline(c, m);
    json change = {{"spec", spec}, {"enabled", true}};
    if (baseline) {
        change["baseline_id"] = *baseline;
        change["mode"] = "rewrite";
        change["rewrite_after_capture"] = false;
    } else {
        change["mode"] = "capture_next";
        change["rewrite_after_capture"] = true;
    }
    if (!mo.target_name.empty()) change["target_name"] = mo.target_name;
    if (auto existing = rule_for(c, m)) {
        print_record(c.call("PATCH", "/rules/" + std::to_string(existing->rule_id), change));
    } else {
        change["matcher"] = m;
        print_record(c.call("POST", "/rules", change));
    }
    if (!baseline) std::cerr << "no baseline yet: the next matching response is captured, then mutated\n";
    return 0;
}

int cmd_campaign(const ControlClient& c, const std::string& plan_path, double timeout_seconds) {
    auto plan = parse_json_file(plan_path);
    try {
        (void)plan.get<CampaignPlan>();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    auto started = c.call("POST", "/campaigns", plan);
    const auto id = started["campaign_id"].get<std::uint64_t>();
    std::cout << "campaign " << id << " started with rule " << started["rule_id"] << "\n" << std::flush;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(static_cast<long>(timeout_seconds * 1000));
    std::size_t reported = 0;
    while (true) {
        auto status = c.call("GET", "/campaigns/" + std::to_string(id));
        const auto& steps = status["steps"];
        while (reported < steps.size()) {
            const auto& s = steps[reported];
            const auto st = s["status"].get<std::string>();
            if (st == "pending" || st == "active") break;
            std::cout << "step " << reported + 1 << " " << s["spec"]["kind"].get<std::string>() << ": " << st;
            if (s.contains("behavior") && !s["behavior"].is_null()) std::cout << " " << s["behavior"].get<std::string>();
            if (!s.value("error", std::string()).empty()) std::cout << " (" << s["error"].get<std::string>() << ")";
            std::cout << "\n" << std::flush;
            ++reported;
        }
        if (status["finished"].get<bool>()) {
            if (!status["error"].is_null()) {
                std::cerr << "campaign failed: " << status["error"].get<std::string>() << "\n";
                return 2;
            }
            return 0;
        }
        if (std::chrono::steady_clock::now() > deadline) {
            c.call("DELETE", "/campaigns/" + std::to_string(id));
            std::cerr << "campaign did not finish in time; cancelled\n";
            return 2;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
}

int cmd_report(const ControlClient& c, const std::string& session_path, const std::string& format_name) {
    ReportFormat format;
    try {
        format = report_format_from_string(format_name);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    if (!session_path.empty()) {
        std::cout << render_report(aggregate(import_session(session_path)), format);
        return 0;
    }
    auto [host, port] = http::split_host_port(c.address, 8081);
    httplib::Client client(host, port);
    client.set_bearer_token_auth(c.token);
    auto res = client.Get(std::string(kControlPrefix) + "/report?format=" + format_name);
    if (!res) throw Error("control API at " + c.address + " unreachable");
    if (res->status != 200) throw Error("control API returned " + std::to_string(res->status) + ": " + res->body);
    std::cout << res->body;
    return 0;
}

// Serves one stored response to every request until interrupted.
int cmd_replay(const std::string& session_path, std::optional<std::uint64_t> exchange_id, const MatcherOptions& mo,
               const std::string& listen) {
    auto data = import_session(session_path);
    std::optional<CapturedExchange> chosen;
    std::optional<EndpointMatcher> m;
    if (!mo.host.empty() || !mo.path.empty()) m = mo.matcher();
    for (auto it = data.exchanges.rbegin(); it != data.exchanges.rend() && !chosen; ++it) {
        if (exchange_id) {
            if (it->id == *exchange_id) chosen = *it;
            continue;
        }
        if (it->origin != Origin::Upstream || it->response.status < 200 || it->response.status >= 300) continue;
        auto key = RequestKey::from_url(it->request.method, it->request.target);
        if (!m || (key && m->matches(*key))) chosen = *it;
    }
    if (!chosen) throw NoBaseline("no stored exchange to replay in " + session_path);

    http::Response response = chosen->response;
    for (const auto& h : chosen->response.headers)
        if (http::is_hop_by_hop(h.name) || http::iequals(h.name, "Content-Length")) response.headers.remove(h.name);
    response.headers.set("Content-Length", std::to_string(response.body.size()));
    response.headers.set("Connection", "close");
    const auto wire = http::serialize(response);

    block_signals();
    auto [host, port] = http::split_host_port(listen, 0);
    auto listener = http::listen_tcp(host, port);
    std::cout << "replay listening on " << listener.host << ":" << listener.port << " serving exchange " << chosen->id
              << "\n" << std::flush;
    std::thread acceptor([&] {
        while (auto s = http::accept_connection(listener.socket)) {
            std::thread([sock = std::move(*s), &wire]() mutable {
                try {
                    sock.set_timeout(std::chrono::seconds(10));
                    http::Stream io(sock);
                    if (auto req = http::read_request(io)) {
                        if (req->method == "HEAD") io.write_all(wire.substr(0, wire.find("\r\n\r\n") + 4));
                        else io.write_all(wire);
                    }
                } catch (const std::exception&) {
                }
            }).detach();
        }
    });
    wait_for_signal();
    listener.socket.shutdown();
    acceptor.join();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robustness-testing proxy that mutates web API responses"};
    app.require_subcommand(1);

    ServiceConfig serve_cfg;
    std::string config_path, session_arg, ui_dir;
    auto* serve = app.add_subcommand("serve", "Run the proxy and the control API");
    serve->add_option("--listen", serve_cfg.listen, "Proxy host:port");
    serve->add_option("--control-listen", serve_cfg.control_listen, "Control API host:port");
    serve->add_option("--session", session_arg, "Session file to load and journal to");
    serve->add_option("--config", config_path, "JSON config file");
    serve->add_option("--token", serve_cfg.control_token, "Control API bearer token")->envname("MUTPROXY_TOKEN");
    serve->add_option("--upstream-timeout", serve_cfg.upstream_timeout_seconds, "Upstream timeout in seconds");
    serve->add_option("--ui-dir", ui_dir, "Dashboard bundle served under /__control/ui/");

    ControlClient client;
    MatcherOptions matcher;
    bool rewrite_after = false;
    auto* capture = app.add_subcommand("capture", "Capture the next matching response as the baseline");
    add_client_options(capture, client);
    add_matcher_options(capture, matcher);
    capture->add_flag("--then-rewrite", rewrite_after, "Switch an existing spec on once captured");

    std::string kind;
    std::vector<std::string> targets;
    std::uint32_t level = 0, count = 1;
    std::optional<int> status;
    std::uint64_t seed = 0;
    auto* mutate = app.add_subcommand("mutate", "Activate a mutation on an endpoint");
    add_client_options(mutate, client);
    add_matcher_options(mutate, matcher);
    mutate->add_option("--kind", kind, "Mutation kind id, e.g. field_removal")->required();
    mutate->add_option("--target", targets, "Field path (repeatable)");
    mutate->add_option("--escalation", level, "Remove the first N removable fields");
    mutate->add_option("--count", count, "Fields to add");
    mutate->add_option("--status", status, "Status override for empty responses");
    mutate->add_option("--seed", seed, "Seed for addition and format disruption");

    auto* campaign = app.add_subcommand("campaign", "Mutation campaigns");
    campaign->require_subcommand(1);
    std::string plan_path;
    double campaign_timeout = 3600;
    auto* campaign_run = campaign->add_subcommand("run", "Run a campaign plan and wait for it");
    add_client_options(campaign_run, client);
    campaign_run->add_option("plan", plan_path, "Campaign plan JSON file")->required();
    campaign_run->add_option("--timeout", campaign_timeout, "Give up after this many seconds");

    std::uint64_t exchange = 0;
    std::string behavior, note;
    auto* observe = app.add_subcommand("observe", "Record the client behavior for a mutated exchange");
    add_client_options(observe, client);
    observe->add_option("--exchange", exchange, "Exchange id")->required();
    observe->add_option("--behavior", behavior, "Behavior id, e.g. force_close")->required();
    observe->add_option("--note", note, "Free text");

    std::string format = "plain";
    auto* report = app.add_subcommand("report", "Aggregate observations into a fragility report");
    add_client_options(report, client);
    report->add_option("--format", format, "plain, markdown or machine");
    report->add_option("--session", session_arg, "Read this session file instead of a running service");

    std::optional<std::uint64_t> replay_id;
    std::string replay_listen = "127.0.0.1:0";
    MatcherOptions replay_matcher;
    auto* replay = app.add_subcommand("replay", "Serve a stored response as a mock upstream");
    replay->add_option("--session", session_arg, "Session file")->required();
    replay->add_option("--exchange", replay_id, "Exchange id (default: newest 2xx upstream response)");
    replay->add_option("--host", replay_matcher.host, "Pick the newest response for this host");
    replay->add_option("--path", replay_matcher.path, "Pick the newest response for this path");
    replay->add_option("--listen", replay_listen, "host:port to serve on");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*serve) {
            if (!session_arg.empty()) serve_cfg.session_path = session_arg;
            if (!ui_dir.empty()) serve_cfg.ui_dir = ui_dir;
            return cmd_serve(serve_cfg, config_path, *serve);
        }
        if (*capture) {
            const auto m = matcher.matcher();
            json change = {{"mode", "capture_next"}, {"enabled", true}, {"rewrite_after_capture", rewrite_after}};
            if (!matcher.target_name.empty()) change["target_name"] = matcher.target_name;
            if (auto existing = rule_for(client, m)) {
                print_record(client.call("PATCH", "/rules/" + std::to_string(existing->rule_id), change));
            } else {
                change["matcher"] = m;
                print_record(client.call("POST", "/rules", change));
            }
            return 0;
        }
        if (*mutate) return cmd_mutate(client, matcher, spec_from(kind, targets, level, count, status, seed));
        if (*campaign_run) return cmd_campaign(client, plan_path, campaign_timeout);
        if (*observe) {
            try {
                (void)behavior_from_string(behavior);
            } catch (const Error& e) {
                throw UsageError(e.what());
            }
            print_record(client.call("POST", "/observations",
                                     json{{"type", "observation"},
                                          {"exchange_id", exchange},
                                          {"behavior", behavior},
                                          {"note", note}}));
            return 0;
        }
        if (*report) return cmd_report(client, session_arg, format);
        if (*replay) return cmd_replay(session_arg, replay_id, replay_matcher, replay_listen);
    } catch (const UsageError& e) {
        std::cerr << "mutproxy: " << e.what() << "\n";
        return 1;
    } catch (const InvalidSpec& e) {
        std::cerr << "mutproxy: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "mutproxy: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
