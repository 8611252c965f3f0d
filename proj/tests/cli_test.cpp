#include <gtest/gtest.h>
#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "e2e.hpp"
#include "mutproxy/control.hpp"
#include "mutproxy/report.hpp"
#include "process.hpp"
#include "support.hpp"

using namespace mutproxy;
using nlohmann::json;
using testsupport::raw_response;
using testsupport::Upstream;

namespace {

const std::string kToken = "cli-token";

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("mutproxy_cli_" + std::to_string(::getpid()) + "_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

struct Run {
    int exit_code = -1;
    std::string out, err;
};

Run cli(std::vector<std::string> args, const std::filesystem::path& dir = temp_dir("run"),
        std::chrono::milliseconds limit = std::chrono::seconds(30)) {
    args.insert(args.begin(), MUTPROXY_CLI);
    std::filesystem::create_directories(dir);
    const auto out = dir / "stdout", err = dir / "stderr";
    testsupport::Process p(args, out.string(), err.string());
    auto r = p.wait(limit);
    return {r.killed ? -2 : r.exit_code, read_file(out), read_file(err)};
}

// A `mutproxy serve` child process with ephemeral ports.
class Served {
public:
    explicit Served(const std::string& name, std::vector<std::string> extra = {},
                    std::optional<std::filesystem::path> session = {})
        : dir_(temp_dir(name)) {
        session_ = session ? *session : dir_ / "session.jsonl";
        std::vector<std::string> args = {MUTPROXY_CLI,       "serve",       "--listen",  "127.0.0.1:0",
                                         "--control-listen", "127.0.0.1:0", "--session", session_.string(),
                                         "--token",          kToken};
        args.insert(args.end(), extra.begin(), extra.end());
        process_ = std::make_unique<testsupport::Process>(args, (dir_ / "serve.out").string(),
                                                          (dir_ / "serve.err").string());
        const std::regex proxy_re("proxy listening on [^:]+:(\\d+)"), control_re("control listening on [^:]+:(\\d+)");
        const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
        while (std::chrono::steady_clock::now() < deadline) {
            auto text = read_file(dir_ / "serve.out");
            std::smatch p, c;
            if (std::regex_search(text, p, proxy_re) && std::regex_search(text, c, control_re)) {
                proxy_port = static_cast<std::uint16_t>(std::stoi(p[1]));
                control_port = static_cast<std::uint16_t>(std::stoi(c[1]));
                output = text;
                return;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        throw std::runtime_error("serve did not start: " + read_file(dir_ / "serve.err"));
    }

    int stop() {
        process_->signal(SIGTERM);
        return process_->wait(std::chrono::seconds(10)).exit_code;
    }

    std::string control() const { return "127.0.0.1:" + std::to_string(control_port); }
    std::vector<std::string> client_args() const { return {"--control", control(), "--token", kToken}; }
    const std::filesystem::path& session() const { return session_; }
    const std::filesystem::path& dir() const { return dir_; }

    json get(const std::string& path) const {
        httplib::Client c("127.0.0.1", control_port);
        c.set_bearer_token_auth(kToken);
        auto r = c.Get(std::string(kControlPrefix) + path);
        if (!r) throw std::runtime_error("control GET failed");
        return json::parse(r->body);
    }

    std::uint16_t proxy_port = 0, control_port = 0;
    std::string output;

private:
    std::filesystem::path dir_, session_;
    std::unique_ptr<testsupport::Process> process_;
};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST(Cli, ReportMarkdownOnTableThree) {
    auto r = cli({"report", "--format", "markdown", "--session", MUTPROXY_FIXTURE_DIR "/sessions/table3.jsonl"});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    for (const char* row : {"| Malformed Response | 2 |", "| Empty Response | 1 |", "| Field Removal | 10 |",
                            "| Changing Data Type | 3 |"})
        EXPECT_NE(r.out.find(row), std::string::npos) << row;
    auto machine = cli({"report", "--format", "machine", "--session", MUTPROXY_FIXTURE_DIR "/sessions/table3.jsonl"});
    EXPECT_EQ(parse_machine_report(machine.out),
              aggregate(import_session(MUTPROXY_FIXTURE_DIR "/sessions/table3.jsonl")));
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(cli({}).exit_code, 1);
    EXPECT_EQ(cli({"--help"}).exit_code, 0);
    EXPECT_EQ(cli({"frobnicate"}).exit_code, 1);
    EXPECT_EQ(cli({"mutate", "--host", "h"}).exit_code, 1);
    auto bad_format = cli({"report", "--format", "pdf", "--session", MUTPROXY_FIXTURE_DIR "/sessions/table3.jsonl"});
    EXPECT_EQ(bad_format.exit_code, 1);
    EXPECT_FALSE(bad_format.err.empty());
    EXPECT_EQ(cli({"report", "--session", "/nonexistent/session.jsonl"}).exit_code, 2);
    // Nothing is listening there.
    auto l = http::listen_tcp("127.0.0.1", 0);
    const auto port = std::to_string(l.port);
    l.socket.close();
    EXPECT_EQ(cli({"observe", "--control", "127.0.0.1:" + port, "--token", "t", "--exchange", "1", "--behavior",
                   "force_close"})
                  .exit_code,
              2);
    const auto dir = temp_dir("badconfig");
    std::ofstream(dir / "c.json") << R"({"listen":"127.0.0.1:0","colour":"blue"})";
    EXPECT_EQ(cli({"serve", "--config", (dir / "c.json").string()}, dir, std::chrono::seconds(5)).exit_code, 1);
}

TEST(Cli, MutateWithoutBaselineArmsCapture) {
    Served s("mutate");
    auto r = cli(concat({"mutate", "--kind", "empty_response", "--host", "api.example.com", "--path", "/v1/report"},
                        s.client_args()));
    ASSERT_EQ(r.exit_code, 0) << r.err;
    auto rules = s.get("/rules")["items"];
    ASSERT_EQ(rules.size(), 1u);
    EXPECT_EQ(rules[0]["matcher"]["host"], "api.example.com");
    EXPECT_EQ(rules[0]["matcher"]["path"], "/v1/report");
    EXPECT_EQ(rules[0]["spec"]["kind"], "empty_response");
    EXPECT_EQ(rules[0]["mode"], "capture_next");
    EXPECT_EQ(rules[0]["rewrite_after_capture"], true);
    EXPECT_EQ(json::parse(r.out), rules[0]);
    EXPECT_EQ(cli(concat({"mutate", "--kind", "shuffle", "--host", "h", "--path", "/p"}, s.client_args())).exit_code, 1);
    EXPECT_EQ(s.stop(), 0);
}

TEST(Cli, CaptureMutateObserveAndJournal) {
    Upstream up([](const http::Request&) {
        return raw_response(200, {{"Content-Type", "application/json"}}, R"({"name":"ada","tags":["x"]})");
    });
    Served s("flow");
    auto fetch = [&] { return testsupport::via(s.proxy_port, testsupport::get(up.url("/profile"))); };
    auto capture = cli(concat({"capture", "--host", "127.0.0.1", "--path", "/profile", "--target-name", "ada"},
                              s.client_args()));
    ASSERT_EQ(capture.exit_code, 0) << capture.err;
    fetch();
    auto mutate = cli(concat({"mutate", "--kind", "field_removal", "--target", "/tags", "--host", "127.0.0.1",
                              "--path", "/profile"},
                             s.client_args()));
    ASSERT_EQ(mutate.exit_code, 0) << mutate.err;
    auto rule = json::parse(mutate.out);
    EXPECT_EQ(rule["mode"], "rewrite");
    EXPECT_EQ(rule["baseline_id"], 1);
    EXPECT_EQ(s.get("/rules")["items"].size(), 1u);  // reused, not duplicated
    EXPECT_EQ(fetch().body, R"({"name":"ada"})");

    auto observe = cli(concat({"observe", "--exchange", "2", "--behavior", "force_close", "--note", "gone"},
                              s.client_args()));
    ASSERT_EQ(observe.exit_code, 0) << observe.err;
    EXPECT_EQ(json::parse(observe.out)["target_name"], "ada");
    EXPECT_EQ(cli(concat({"observe", "--exchange", "2", "--behavior", "meh"}, s.client_args())).exit_code, 1);
    EXPECT_EQ(cli(concat({"observe", "--exchange", "1", "--behavior", "force_close"}, s.client_args())).exit_code, 2);
    EXPECT_EQ(cli(concat({"observe", "--exchange", "2", "--behavior", "force_close"},
                         {"--control", s.control(), "--token", "nope"}))
                  .exit_code,
              2);

    auto live = cli(concat({"report", "--format", "markdown"}, s.client_args()));
    ASSERT_EQ(live.exit_code, 0) << live.err;
    EXPECT_NE(live.out.find("| Field Removal | 1 |"), std::string::npos) << live.out;

    EXPECT_EQ(s.stop(), 0);
    auto saved = import_session(s.session());
    ASSERT_EQ(saved.exchanges.size(), 2u);
    ASSERT_EQ(saved.observations.size(), 1u);
    EXPECT_EQ(saved.observations[0].behavior, Behavior::ForceClose);
    ASSERT_EQ(saved.rules.size(), 1u);

    // The journaled session reloads and still serves the rule.
    Served again("flow2", {}, s.session());
    EXPECT_EQ(testsupport::via(again.proxy_port, testsupport::get(up.url("/profile"))).body, R"({"name":"ada"})");
    EXPECT_EQ(again.stop(), 0);
}

TEST(Cli, ConfigFileAndGeneratedToken) {
    const auto dir = temp_dir("config");
    std::ofstream(dir / "c.json") << json{{"listen", "127.0.0.1:0"},
                                          {"control_listen", "127.0.0.1:0"},
                                          {"control_token", kToken},
                                          {"upstream_timeout_seconds", 2}}
                                         .dump();
    {
        Served s("cfg", {"--config", (dir / "c.json").string()});
        EXPECT_TRUE(s.get("/rules")["items"].empty());
        EXPECT_EQ(s.output.find("control token"), std::string::npos);
        EXPECT_EQ(s.stop(), 0);
    }
    std::ofstream(dir / "notoken.json") << R"({"listen":"127.0.0.1:0","control_listen":"127.0.0.1:0"})";
    testsupport::Process p({MUTPROXY_CLI, "serve", "--config", (dir / "notoken.json").string()},
                           (dir / "out").string());
    std::string text;
    for (int i = 0; i < 500 && text.find("control token") == std::string::npos; ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
        text = read_file(dir / "out");
    }
    EXPECT_NE(text.find("control token "), std::string::npos);
    p.signal(SIGTERM);
    EXPECT_EQ(p.wait(std::chrono::seconds(10)).exit_code, 0);
}

TEST(Cli, ReplayServesStoredBaseline) {
    const auto dir = temp_dir("replay");
    SessionData data;
    CapturedExchange e;
    e.id = 4;
    e.wall_ms = 1;
    e.mono_ns = 1;
    e.request.target = "http://api.example/v1/report?city=ams";
    e.response.status = 200;
    e.response.reason = "OK";
    e.response.headers = {{"Content-Type", "application/json"}, {"Content-Length", "13"}};
    e.response.body = R"({"temp":11.5})";
    data.exchanges.push_back(e);
    {
        std::ofstream out(dir / "s.jsonl");
        write_session(out, data);
    }
    testsupport::Process p({MUTPROXY_CLI, "replay", "--session", (dir / "s.jsonl").string()},
                           (dir / "out").string());
    std::smatch m;
    std::string text;
    const std::regex re("replay listening on [^:]+:(\\d+)");
    for (int i = 0; i < 500 && !std::regex_search(text, m, re); ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
        text = read_file(dir / "out");
    }
    ASSERT_TRUE(std::regex_search(text, m, re)) << text;
    const auto port = static_cast<std::uint16_t>(std::stoi(m[1]));
    for (int i = 0; i < 2; ++i) {
        http::Request req;
        req.target = "/anything";
        req.headers.add("Host", "x");
        auto resp = http::round_trip("127.0.0.1", port, req, std::chrono::seconds(5));
        EXPECT_EQ(resp.status, 200);
        EXPECT_EQ(resp.body, e.response.body);
        EXPECT_EQ(resp.headers.get("Content-Type"), "application/json");
    }
    p.signal(SIGTERM);
    EXPECT_EQ(p.wait(std::chrono::seconds(10)).exit_code, 0);
    EXPECT_EQ(cli({"replay", "--session", (dir / "s.jsonl").string(), "--exchange", "9"}).exit_code, 2);
}

// The six-operator plan driven from the command line, with simclient as the app.
TEST(Cli, CampaignRunAgainstSimclient) {
    Upstream up([](const http::Request&) {
        return raw_response(200, {{"Content-Type", "application/json"}}, testsupport::kSixOpBody);
    });
    Served s("campaign");
    const auto url = up.url("/departures");
    testsupport::via(s.proxy_port, testsupport::get(url));  // baseline

    testsupport::Process run(concat({MUTPROXY_CLI, "campaign", "run", MUTPROXY_FIXTURE_DIR "/six-ops.plan"},
                                    s.client_args()),
                             (s.dir() / "campaign.out").string(), (s.dir() / "campaign.err").string());
    std::atomic<bool> finished{false};
    testsupport::SimOperatorOptions o;
    o.simclient = MUTPROXY_SIMCLIENT;
    o.url = url;
    o.proxy_port = s.proxy_port;
    o.matrix = testsupport::six_op_matrix();
    o.expected_body = testsupport::kSixOpBody;
    o.work_dir = s.dir() / "operator";
    o.latest_mutated = [&]() -> std::optional<std::uint64_t> {
        auto flows = s.get("/flows?limit=1000")["items"];
        for (auto it = flows.rbegin(); it != flows.rend(); ++it)
            if ((*it)["origin"] == "mutated_local") return (*it)["id"].get<std::uint64_t>();
        return std::nullopt;
    };
    o.observe = [&](std::uint64_t id, Behavior b) {
        auto r = cli(concat({"observe", "--exchange", std::to_string(id), "--behavior", std::string(to_string(b))},
                            s.client_args()),
                     s.dir() / "observe");
        EXPECT_EQ(r.exit_code, 0) << r.err;
    };
    o.finished = [&] { return finished.load(); };
    testsupport::SimOperator op(o);
    auto result = run.wait(std::chrono::seconds(120));
    finished = true;
    op.stop();
    EXPECT_EQ(result.exit_code, 0) << read_file(s.dir() / "campaign.err");
    const auto out = read_file(s.dir() / "campaign.out");
    EXPECT_NE(out.find("step 6 format_disruption: observed graceful_timeout"), std::string::npos) << out;

    auto observations = s.get("/observations")["items"];
    ASSERT_EQ(observations.size(), 6u);
    const auto matrix = testsupport::six_op_matrix();
    for (const auto& ob : observations) {
        const auto kind = mutation_kind_from_string(ob["mutation"]["kind"].get<std::string>());
        EXPECT_EQ(ob["behavior"], to_string(behavior_for(matrix.react(kind)))) << ob.dump();
        EXPECT_EQ(ob["target_name"], "departures-app");
    }
    EXPECT_EQ(s.stop(), 0);
}
