#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "mutproxy/campaign.hpp"
#include "mutproxy/errors.hpp"
#include "mutproxy/proxy.hpp"
#include "support.hpp"

using namespace mutproxy;
using testsupport::raw_response;
using testsupport::Upstream;

namespace {

const std::string kBody = R"({"name":"ada","age":36,"tags":["x"]})";

struct Harness {
    Upstream up{[](const http::Request&) { return raw_response(200, {{"Content-Type", "application/json"}}, kBody); }};
    Session session;
    RuleTable rules;
    EventBus events;
    std::unique_ptr<ProxyHandle> proxy;
    CampaignManager campaigns{session, rules, &events};

    Harness() {
        bind_rules(rules, session, &events);
        proxy = start_proxy(ProxyConfig{}, session, rules, &events);
    }
    ~Harness() {
        campaigns.cancel_all();
        proxy->stop();
    }

    http::Response fetch() { return testsupport::via(proxy->port(), testsupport::get(up.url("/profile"))); }

    CampaignPlan plan(std::vector<MutationSpec> steps, double wait = 5) {
        CampaignPlan p;
        p.name = "t";
        p.matcher = {"127.0.0.1", "/profile", {}, std::nullopt};
        p.steps = std::move(steps);
        p.per_step_wait = wait;
        return p;
    }
};

// Fetches through the proxy and reports a behavior for each mutated response
// until stopped.
class Operator {
public:
    explicit Operator(Harness& h) : h_(h), thread_([this] { loop(); }) {}
    ~Operator() {
        stop_ = true;
        thread_.join();
    }

private:
    void loop() {
        std::uint64_t seen = 0;
        while (!stop_) {
            h_.fetch();
            auto all = h_.session.exchanges(0);
            for (const auto& e : all) {
                if (e.id <= seen) continue;
                seen = e.id;
                if (e.origin == Origin::MutatedLocal && e.mutation)
                    record_observation(h_.session, e.id, Behavior::ErrorMessage, "");
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
    }
    Harness& h_;
    std::atomic<bool> stop_{false};
    std::thread thread_;
};

}  // namespace

TEST(CampaignPlan, StrictJson) {
    auto good = nlohmann::json::parse(R"({"name":"n","matcher":{"host":"h","path":"/p"},
        "steps":[{"kind":"empty_response"}],"per_step_wait":2})");
    auto p = good.get<CampaignPlan>();
    EXPECT_EQ(p.steps.size(), 1u);
    EXPECT_EQ(nlohmann::json(p).get<CampaignPlan>(), p);
    auto extra = good;
    extra["bogus"] = 1;
    EXPECT_THROW(extra.get<CampaignPlan>(), InvalidSpec);
    auto empty = good;
    empty["steps"] = nlohmann::json::array();
    EXPECT_THROW(empty.get<CampaignPlan>(), InvalidSpec);
    auto zero = good;
    zero["per_step_wait"] = 0;
    EXPECT_THROW(zero.get<CampaignPlan>(), InvalidSpec);
}

TEST(Campaign, NoBaselineIsSynchronous) {
    Harness h;
    EXPECT_THROW(h.campaigns.start(h.plan({{MutationKind::EmptyResponse}})), NoBaseline);
    EXPECT_TRUE(h.rules.list().empty());
}

TEST(Campaign, StepsRunInPlanOrder) {
    Harness h;
    h.fetch();  // baseline
    std::vector<MutationSpec> steps = {
        {MutationKind::FieldRemoval, {"/tags"}},
        {MutationKind::FieldRemoval, {"/missing"}},  // pre-validation fails
        {MutationKind::TypeChange, {"/age"}},
        {MutationKind::EmptyResponse},
    };
    const auto after = h.events.last_id();
    auto run = h.campaigns.start(h.plan(steps));
    {
        Operator op(h);
        ASSERT_TRUE(run->wait(std::chrono::seconds(30)));
    }
    EXPECT_FALSE(run->error());
    auto results = run->results();
    ASSERT_EQ(results.size(), 4u);
    EXPECT_EQ(results[0].status, StepStatus::Observed);
    EXPECT_EQ(results[1].status, StepStatus::Failed);
    EXPECT_FALSE(results[1].error.empty());
    EXPECT_EQ(results[2].status, StepStatus::Observed) << results[2].error;
    EXPECT_EQ(results[3].status, StepStatus::Observed);
    for (std::size_t i : {0u, 2u, 3u}) {
        ASSERT_FALSE(results[i].exchange_ids.empty());
        for (auto id : results[i].exchange_ids) EXPECT_EQ(h.session.exchange(id)->mutation, steps[i]);
    }

    // campaign-step events: (index, phase) in plan order, then finished.
    std::vector<std::pair<std::size_t, std::string>> seen;
    bool finished = false;
    for (const auto& e : h.events.since(after)) {
        if (e.type == "campaign-step") {
            EXPECT_FALSE(finished);
            seen.emplace_back(e.data["index"].get<std::size_t>(), e.data["phase"].get<std::string>());
        }
        if (e.type == "campaign-finished") finished = true;
    }
    EXPECT_TRUE(finished);
    std::vector<std::pair<std::size_t, std::string>> expected = {
        {0, "started"}, {0, "ended"}, {1, "ended"}, {2, "started"}, {2, "ended"}, {3, "started"}, {3, "ended"}};
    EXPECT_EQ(seen, expected);
    EXPECT_FALSE(h.rules.get(run->rule_id())->enabled);
}

TEST(Campaign, StepTimesOutWithoutObservation) {
    Harness h;
    h.fetch();
    auto run = h.campaigns.start(h.plan({{MutationKind::EmptyResponse}}, 0.2));
    ASSERT_TRUE(run->wait(std::chrono::seconds(5)));
    EXPECT_EQ(run->results()[0].status, StepStatus::TimedOut);
}

TEST(Campaign, OnePlanPerEndpoint) {
    Harness h;
    h.fetch();
    auto run = h.campaigns.start(h.plan({{MutationKind::EmptyResponse}}, 10));
    EXPECT_THROW(h.campaigns.start(h.plan({{MutationKind::EmptyResponse}})), IllegalTransition);
    run->cancel();
    ASSERT_TRUE(run->wait(std::chrono::seconds(5)));
    EXPECT_EQ(run->results()[0].status, StepStatus::Cancelled);
    EXPECT_NO_THROW(h.campaigns.start(h.plan({{MutationKind::EmptyResponse}}, 0.1)));
}

TEST(Campaign, CapturesBaselineFirst) {
    Harness h;
    auto p = h.plan({{MutationKind::MalformedResponse}});
    p.capture_baseline = true;
    auto run = h.campaigns.start(p);
    {
        Operator op(h);
        ASSERT_TRUE(run->wait(std::chrono::seconds(20)));
    }
    EXPECT_FALSE(run->error());
    EXPECT_EQ(run->results()[0].status, StepStatus::Observed);
    auto rule = h.rules.get(run->rule_id());
    ASSERT_TRUE(rule->baseline_id);
    EXPECT_EQ(h.session.exchange(*rule->baseline_id)->origin, Origin::Upstream);
}

TEST(Campaign, CaptureTimeoutReportsError) {
    Harness h;
    auto p = h.plan({{MutationKind::EmptyResponse}}, 0.1);
    p.capture_baseline = true;
    auto run = h.campaigns.start(p);
    ASSERT_TRUE(run->wait(std::chrono::seconds(5)));
    ASSERT_TRUE(run->error());
    EXPECT_EQ(run->results()[0].status, StepStatus::Cancelled);
}
