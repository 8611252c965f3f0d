#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "mutproxy/errors.hpp"
#include "mutproxy/session.hpp"

using namespace mutproxy;

namespace {

CapturedExchange exchange_at(const std::string& url, double seconds, Origin origin = Origin::Upstream) {
    CapturedExchange e;
    // Offset so no timestamp is 0, which append() would overwrite.
    e.mono_ns = static_cast<std::int64_t>((1000 + seconds) * 1e9);
    e.wall_ms = 1700000000000 + static_cast<std::int64_t>(seconds * 1000);
    e.request.method = "GET";
    e.request.target = url;
    e.request.headers.add("Host", "api.test");
    e.response.status = 200;
    e.response.headers.add("Content-Type", "application/json");
    e.response.body = R"({"a":1})";
    e.origin = origin;
    if (origin == Origin::MutatedLocal) {
        e.rule_id = 4;
        e.mutation = MutationSpec{MutationKind::FieldRemoval, {"/a"}};
        e.response.body = "{}";
    }
    return e;
}

SessionData sample() {
    Session s;
    s.append(exchange_at("http://api.test/data", 0));
    auto m = s.append(exchange_at("http://api.test/data", 1, Origin::MutatedLocal));
    RewriteRule r;
    r.rule_id = 4;
    r.target_name = "api.test";
    r.matcher = {"api.test", "/data", {{"k", "v"}}, "GET"};
    r.baseline_id = 1;
    r.spec = MutationSpec{MutationKind::TypeChange, {"a"}, 2, 1, std::nullopt, 9};
    r.mode = RuleMode::Rewrite;
    s.put_rule(r);
    record_observation(s, m.id, Behavior::ErrorMessage, "shows a toast");
    s.put_profile({"api.test", CachingKind::TimeBased, {VersioningScheme::UrlPath, "v1"}, "n"});
    return s.data();
}

std::string to_text(const SessionData& d) {
    std::ostringstream out;
    write_session(out, d);
    return out.str();
}

SessionData from_text(const std::string& text) {
    std::istringstream in(text);
    return read_session(in);
}

std::size_t corrupt_line(const std::string& text) {
    try {
        from_text(text);
    } catch (const CorruptSessionFile& e) {
        return e.line();
    }
    return 0;
}

}  // namespace

TEST(SessionFile, RoundTrip) {
    auto d = sample();
    EXPECT_EQ(from_text(to_text(d)), d);
}

TEST(SessionFile, BinaryBodiesSurvive) {
    auto d = sample();
    std::string bytes;
    for (int c = 0; c < 256; ++c) bytes.push_back(static_cast<char>(c));
    d.exchanges[0].response.body = bytes;
    auto text = to_text(d);
    EXPECT_NE(text.find("body_b64"), std::string::npos);
    EXPECT_EQ(from_text(text), d);
}

TEST(SessionFile, RandomRoundTrip) {
    // Property: write/read is the identity on arbitrary exchange content.
    std::mt19937 rng(7);
    for (int round = 0; round < 50; ++round) {
        SessionData d;
        std::uniform_int_distribution<int> byte(0, 255), len(0, 40);
        for (std::uint64_t id = 1; id <= 20; ++id) {
            auto e = exchange_at("http://api.test/p" + std::to_string(id) + "?q=" + std::to_string(rng()), id);
            e.id = id;
            e.response.body.clear();
            const int n = len(rng);
            const bool ascii = rng() % 2;
            for (int k = 0; k < n; ++k)
                e.response.body.push_back(static_cast<char>(ascii ? 32 + byte(rng) % 95 : byte(rng)));
            e.response.status = 100 + static_cast<int>(rng() % 500);
            e.client_aborted = rng() % 3 == 0;
            d.exchanges.push_back(e);
        }
        ASSERT_EQ(from_text(to_text(d)), d) << "round " << round;
    }
}

TEST(SessionFile, TruncatedFinalLine) {
    auto text = to_text(sample());
    text.pop_back();  // drop the final newline
    const auto lines = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) + 1;
    EXPECT_EQ(corrupt_line(text), lines);
    // Cut in the middle of a record.
    auto cut = to_text(sample());
    cut.resize(cut.size() / 2);
    EXPECT_GT(corrupt_line(cut), 0u);
}

TEST(SessionFile, MissingHeader) {
    EXPECT_EQ(corrupt_line(R"({"type":"profile","target_name":"x"})" "\n"), 1u);
    EXPECT_EQ(corrupt_line(""), 1u);
}

TEST(SessionFile, BadRecords) {
    const std::string header = R"({"type":"header","format_version":1})" "\n";
    EXPECT_EQ(corrupt_line(header + "not json\n"), 2u);
    EXPECT_EQ(corrupt_line(header + R"({"type":"mystery"})" "\n"), 2u);
    EXPECT_EQ(corrupt_line(R"({"type":"header","format_version":99})" "\n"), 1u);
}

TEST(SessionFile, ObservationIntegrity) {
    auto d = sample();
    d.observations[0].exchange_id = 99;
    EXPECT_GT(corrupt_line(to_text(d)), 0u);
    d = sample();
    d.observations[0].exchange_id = 1;  // upstream exchange
    EXPECT_GT(corrupt_line(to_text(d)), 0u);
}

TEST(SessionFile, ExchangeIdsOrdered) {
    auto d = sample();
    std::swap(d.exchanges[0], d.exchanges[1]);
    EXPECT_EQ(corrupt_line(to_text(d)), 3u);
}

TEST(SessionFile, LaterRecordsReplace) {
    auto d = sample();
    auto text = to_text(d);
    auto rule = d.rules[0];
    rule.enabled = false;
    nlohmann::json j = rule;
    j["type"] = "rule";
    text += j.dump() + "\n";
    text += R"({"type":"rule_deleted","rule_id":4})" "\n";
    auto back = from_text(text);
    EXPECT_TRUE(back.rules.empty());
}

TEST(SessionJournal, ReplaysToSameState) {
    auto path = std::filesystem::temp_directory_path() / ("mutproxy_journal_" + std::to_string(::getpid()) + ".jsonl");
    {
        Session s;
        s.append(exchange_at("http://api.test/data", 0));
        s.open_journal(path);
        auto m = s.append(exchange_at("http://api.test/data", 1, Origin::MutatedLocal));
        s.mark_client_aborted(m.id);
        record_observation(s, m.id, Behavior::ForceClose, "");
        RewriteRule r;
        r.rule_id = 1;
        r.matcher = {"api.test", "/data", {}, std::nullopt};
        s.put_rule(r);
        s.drop_rule(1);
        s.put_profile({"api.test", CachingKind::None, {}, ""});
        auto expected = s.data();
        EXPECT_EQ(import_session(path), expected);
    }
    std::filesystem::remove(path);
}

TEST(Observation, ChecksExchange) {
    Session s;
    auto up = s.append(exchange_at("http://api.test/data", 0));
    EXPECT_THROW(record_observation(s, 42, Behavior::NormalLoad, ""), UnknownExchange);
    EXPECT_THROW(record_observation(s, up.id, Behavior::NormalLoad, ""), NotMutated);
    auto marker_only = exchange_at("http://api.test/data", 1, Origin::MutatedLocal);
    marker_only.mutation.reset();
    auto mk = s.append(marker_only);
    EXPECT_THROW(record_observation(s, mk.id, Behavior::NormalLoad, ""), NotMutated);
    EXPECT_EQ(s.observation_count(), 0u);
}

TEST(Observation, RetryCountFromSyntheticLog) {
    Session s;
    auto subject = s.append(exchange_at("http://api.test/data?x=1", 0, Origin::MutatedLocal));
    s.append(exchange_at("http://api.test/data?x=2", 2.5));
    s.append(exchange_at("http://api.test/other", 3));
    s.append(exchange_at("http://api.test/data", 5));
    s.append(exchange_at("http://api.test/data", 29.9));
    s.append(exchange_at("http://api.test/data", 31));  // outside the window
    auto o = record_observation(s, subject.id, Behavior::GracefulTimeout, "spinner then message");
    EXPECT_EQ(o.auto_signals.retry_count, 3u);
    ASSERT_TRUE(o.auto_signals.seconds_to_next_request);
    EXPECT_DOUBLE_EQ(*o.auto_signals.seconds_to_next_request, 2.5);
    EXPECT_FALSE(o.auto_signals.client_aborted);
    EXPECT_EQ(o.target_name, "api.test");
    EXPECT_EQ(o.mutation.kind, MutationKind::FieldRemoval);
}

TEST(Observation, WaitWakesOnAdd) {
    Session s;
    auto m = s.append(exchange_at("http://api.test/data", 0, Origin::MutatedLocal));
    std::thread t([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        record_observation(s, m.id, Behavior::NormalLoad, "");
    });
    EXPECT_TRUE(s.wait_for_observations(1, std::chrono::seconds(5)));
    t.join();
    EXPECT_FALSE(s.wait_for_observations(2, std::chrono::milliseconds(20)));
}

TEST(Names, BehaviorsRoundTrip) {
    for (auto b : kAllBehaviors) EXPECT_EQ(behavior_from_string(to_string(b)), b);
    EXPECT_EQ(display_name(Behavior::ForceClose), "Force Close");
    EXPECT_THROW(behavior_from_string("exploded"), InvalidSpec);
}

TEST(Base64, KnownVectors) {
    EXPECT_EQ(base64_encode(""), "");
    EXPECT_EQ(base64_encode("f"), "Zg==");
    EXPECT_EQ(base64_encode("fo"), "Zm8=");
    EXPECT_EQ(base64_encode("foo"), "Zm9v");
    EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
    EXPECT_EQ(base64_decode("Zm9vYmFy"), "foobar");
    EXPECT_THROW(base64_decode("Zm9"), Error);
}

TEST(Utf8, Validation) {
    EXPECT_TRUE(is_valid_utf8("plain"));
    EXPECT_TRUE(is_valid_utf8("\xC3\xA9\xE2\x82\xAC\xF0\x9F\x98\x80"));
    EXPECT_FALSE(is_valid_utf8("\xC3"));
    EXPECT_FALSE(is_valid_utf8("\xC0\x80"));        // overlong
    EXPECT_FALSE(is_valid_utf8("\xED\xA0\x80"));    // surrogate
    EXPECT_FALSE(is_valid_utf8("\xF4\x90\x80\x80"));  // above U+10FFFF
}
