#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mutproxy/errors.hpp"
#include "mutproxy/simclient.hpp"
#include "oracles.hpp"
#include "process.hpp"
#include "support.hpp"

using namespace mutproxy;
using testsupport::raw_response;
using testsupport::Upstream;

namespace {

struct Case {
    std::string fixture;
    MutationSpec spec;
};

// Every (operator, parameters) pair the corpus admits.
std::vector<Case> all_cases(const oracle::Fixture& f) {
    std::vector<Case> out;
    auto tree = parse(f.body, f.format);
    out.push_back({f.name, {MutationKind::MalformedResponse}});
    out.push_back({f.name, {MutationKind::EmptyResponse}});
    auto removable = oracle::removal_targets(tree);
    for (const auto& t : removable) out.push_back({f.name, {MutationKind::FieldRemoval, {t}}});
    for (std::uint32_t level = 1; level <= removable.size() && level <= 6; ++level)
        out.push_back({f.name, {MutationKind::FieldRemoval, {}, level}});
    for (std::uint64_t seed = 0; seed < 5; ++seed)
        for (std::uint32_t count = 1; count <= 3; ++count)
            out.push_back({f.name, {MutationKind::FieldAddition, {}, 0, count, std::nullopt, seed}});
    out.push_back({f.name, {MutationKind::TypeChange}});
    for (const auto& [path, _] : oracle::leaves(tree)) out.push_back({f.name, {MutationKind::TypeChange, {path}}});
    for (std::uint64_t seed = 0; seed < 10; ++seed)
        out.push_back({f.name, {MutationKind::FormatDisruption, {}, 0, 1, std::nullopt, seed}});
    return out;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("mutproxy_sim_" + std::to_string(::getpid()) + "_" + name))
        .string();
}

void write_file(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

std::vector<LogLine> log_of(const std::string& path) {
    std::ifstream in(path);
    return read_log(in);
}

const std::string kBody = R"({"station":"Utrecht","delay":4,"platform":"5b"})";

std::string matrix_file(const std::string& name, Reaction for_all) {
    FragilityMatrix m;
    for (auto k : kAllMutationKinds) m.reactions[k] = for_all;
    auto path = temp_path(name);
    write_file(path, nlohmann::json(m).dump());
    return path;
}

}  // namespace

TEST(Detection, SoundOverCorpus) {
    std::map<MutationKind, std::size_t> applied;
    std::size_t checked = 0;
    for (const auto& f : oracle::load_corpus()) {
        for (const auto& c : all_cases(f)) {
            MutationOutcome out;
            try {
                out = apply_mutation(f.body, f.format, c.spec);
            } catch (const MutationError&) {
                continue;  // operator not applicable with these parameters
            }
            ++checked;
            ++applied[c.spec.kind];
            auto got = detect_mutation(f.body, f.format, out.body);
            ASSERT_TRUE(got) << f.name << " " << nlohmann::json(c.spec).dump();
            EXPECT_EQ(*got, c.spec.kind) << f.name << " " << nlohmann::json(c.spec).dump() << " detected as "
                                         << to_string(*got);
        }
    }
    for (auto k : kAllMutationKinds) EXPECT_GT(applied[k], 0u) << to_string(k);
    EXPECT_GT(checked, 500u);
}

TEST(Detection, UnchangedIsNone) {
    for (const auto& f : oracle::load_corpus()) EXPECT_FALSE(detect_mutation(f.body, f.format, f.body)) << f.name;
}

TEST(Matrix, JsonRequiresEveryKind) {
    auto j = nlohmann::json::parse(R"({"field_addition":"normal_load","field_removal":"crash",
        "malformed_response":"error_message","empty_response":"hang","type_change":"silent_failure",
        "format_disruption":"timeout"})");
    auto m = j.get<FragilityMatrix>();
    EXPECT_EQ(m.react(MutationKind::EmptyResponse), Reaction::Hang);
    EXPECT_EQ(m.react(std::nullopt), Reaction::NormalLoad);
    EXPECT_EQ(nlohmann::json(m).get<FragilityMatrix>(), m);
    auto missing = j;
    missing.erase("type_change");
    EXPECT_THROW(missing.get<FragilityMatrix>(), InvalidSpec);
    auto bad = j;
    bad["type_change"] = "explode";
    EXPECT_THROW(bad.get<FragilityMatrix>(), InvalidSpec);
}

TEST(Matrix, ReactionsMapToBehaviors) {
    EXPECT_EQ(behavior_for(Reaction::Crash), Behavior::ForceClose);
    EXPECT_EQ(behavior_for(Reaction::Hang), Behavior::IndefiniteLoading);
    EXPECT_EQ(behavior_for(Reaction::Timeout), Behavior::GracefulTimeout);
    EXPECT_EQ(behavior_for(Reaction::SilentFailure), Behavior::SilentFailure);
    EXPECT_EQ(behavior_for(Reaction::ErrorMessage), Behavior::ErrorMessage);
    EXPECT_EQ(behavior_for(Reaction::NormalLoad), Behavior::NormalLoad);
}

TEST(Log, LineRoundTrip) {
    LogLine l{1234, 3, MutationKind::TypeChange, "silent_failure"};
    EXPECT_EQ(format_log_line(l), "1234,3,type_change,silent_failure");
    EXPECT_EQ(parse_log_line(format_log_line(l)), l);
    EXPECT_EQ(parse_log_line("5,0,none,baseline").detected, std::nullopt);
    EXPECT_THROW(parse_log_line("5,0,none"), InvalidSpec);
    EXPECT_THROW(parse_log_line("5,0,none,dance"), InvalidSpec);
}

TEST(SimClient, InProcessNormalLoad) {
    Upstream up([](const http::Request&) { return raw_response(200, {{"Content-Type", "application/json"}}, kBody); });
    SimOptions o;
    o.url = up.url("/departures");
    o.cycles = 2;
    o.interval = std::chrono::milliseconds(1);
    std::ostringstream log, echo;
    EXPECT_EQ(run_simclient(o, log, echo), 0);
    std::istringstream in(log.str());
    auto lines = read_log(in);
    ASSERT_EQ(lines.size(), 3u);
    EXPECT_EQ(lines[0].reaction, "baseline");
    EXPECT_EQ(lines[1].reaction, "normal_load");
    EXPECT_EQ(lines[2].cycle, 2u);
    EXPECT_NE(echo.str().find("rendered 4 fields"), std::string::npos) << echo.str();
}

TEST(SimClient, UnreachableProxy) {
    auto l = http::listen_tcp("127.0.0.1", 0);
    const auto port = l.port;
    l.socket.close();
    SimOptions o;
    o.url = "http://api.test/x";
    o.proxy = "127.0.0.1:" + std::to_string(port);
    std::ostringstream log, echo;
    EXPECT_THROW(run_simclient(o, log, echo), ProxyUnreachable);
}

TEST(SimClientProcess, MalformedCrashes) {
    Upstream up([](const http::Request&) { return raw_response(200, {}, R"({"station":"Utrecht)"); });
    auto expect = temp_path("expect_crash");
    write_file(expect, kBody);
    auto log = temp_path("crash.log");
    auto r = testsupport::run_process({MUTPROXY_SIMCLIENT, "--url", up.url("/d"), "--matrix",
                                       matrix_file("crash.json", Reaction::Crash), "--expect", expect, "--log", log},
                                      std::chrono::seconds(10));
    EXPECT_FALSE(r.killed);
    EXPECT_EQ(r.exit_code, kCrashExitCode);
    auto lines = log_of(log);
    ASSERT_EQ(lines.size(), 1u);
    EXPECT_EQ(lines[0].detected, MutationKind::MalformedResponse);
    EXPECT_EQ(lines[0].reaction, "crash");
}

TEST(SimClientProcess, EmptyHangsUntilKilled) {
    Upstream up([](const http::Request&) { return raw_response(200, {}, ""); });
    auto expect = temp_path("expect_hang");
    write_file(expect, kBody);
    auto log = temp_path("hang.log");
    auto r = testsupport::run_process({MUTPROXY_SIMCLIENT, "--url", up.url("/d"), "--matrix",
                                       matrix_file("hang.json", Reaction::Hang), "--expect", expect, "--log", log,
                                       "--cycles", "5"},
                                      std::chrono::milliseconds(700));
    EXPECT_TRUE(r.killed);
    auto lines = log_of(log);
    ASSERT_EQ(lines.size(), 1u);
    EXPECT_EQ(lines[0].reaction, "hang");
    // It never re-requested.
    EXPECT_EQ(up.hits(), 1);
}

TEST(SimClientProcess, TimeoutRetriesTwice) {
    Upstream up([](const http::Request&) { return raw_response(200, {}, R"({"station":"Utrecht","platform":"5b"})"); });
    auto expect = temp_path("expect_timeout");
    write_file(expect, kBody);
    auto log = temp_path("timeout.log");
    auto r = testsupport::run_process({MUTPROXY_SIMCLIENT, "--url", up.url("/d"), "--matrix",
                                       matrix_file("timeout.json", Reaction::Timeout), "--expect", expect, "--log",
                                       log, "--interval-ms", "1"},
                                      std::chrono::seconds(10));
    EXPECT_EQ(r.exit_code, 0);
    auto lines = log_of(log);
    ASSERT_EQ(lines.size(), 3u);
    EXPECT_EQ(lines[0].reaction, "retry");
    EXPECT_EQ(lines[1].reaction, "retry");
    EXPECT_EQ(lines[2].reaction, "timeout");
    EXPECT_EQ(lines[2].detected, MutationKind::FieldRemoval);
    EXPECT_EQ(up.hits(), 3);
}

TEST(SimClientProcess, UsageError) {
    auto r = testsupport::run_process({MUTPROXY_SIMCLIENT, "--cycles", "2"}, std::chrono::seconds(5));
    EXPECT_NE(r.exit_code, 0);
    EXPECT_NE(r.exit_code, kCrashExitCode);
}
