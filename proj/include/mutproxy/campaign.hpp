#pragma once

// Mutation campaigns: an ordered list of specs applied to one endpoint, each
// held until the operator records an observation or the step times out.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mutproxy/events.hpp"
#include "mutproxy/rules.hpp"
#include "mutproxy/session.hpp"

namespace mutproxy {

struct CampaignPlan {
    std::string name;
    std::string target_name;  // defaults to the matcher host
    EndpointMatcher matcher;
    std::vector<MutationSpec> steps;
    double per_step_wait = 60;  // seconds
    // Arm a CaptureNext rule first instead of requiring a recorded baseline.
    bool capture_baseline = false;

    bool operator==(const CampaignPlan&) const = default;
};

// Unknown fields, an empty step list or a non-positive wait throw InvalidSpec.
void to_json(nlohmann::json& j, const CampaignPlan& p);
void from_json(const nlohmann::json& j, CampaignPlan& p);

enum class StepStatus { Pending, Active, Observed, TimedOut, Failed, Cancelled };
std::string_view to_string(StepStatus s);

struct StepResult {
    std::size_t index = 0;
    MutationSpec spec;
    StepStatus status = StepStatus::Pending;
    std::string error;  // why the step failed
    std::vector<std::uint64_t> exchange_ids;  // mutated responses served during the step
    std::optional<Behavior> behavior;
};
void to_json(nlohmann::json& j, const StepResult& r);

// Latest 2xx upstream exchange matching m, if any.
std::optional<CapturedExchange> find_baseline(const Session& session, const EndpointMatcher& m);

class CampaignRun {
public:
    // Throws NoBaseline when capture_baseline is off and the session holds no
    // usable baseline, InvalidSpec for a malformed plan.
    CampaignRun(std::uint64_t id, CampaignPlan plan, Session& session, RuleTable& rules, EventBus* events);
    ~CampaignRun();
    CampaignRun(const CampaignRun&) = delete;
    CampaignRun& operator=(const CampaignRun&) = delete;

    std::uint64_t id() const { return id_; }
    const CampaignPlan& plan() const { return plan_; }
    std::uint64_t rule_id() const { return rule_id_; }

    // True once the run has finished.
    bool wait(std::chrono::milliseconds timeout) const;
    bool finished() const;
    void cancel();
    std::vector<StepResult> results() const;
    std::optional<std::string> error() const;

    nlohmann::json status() const;

private:
    void run();
    void emit(const std::string& type, nlohmann::json data);
    // Sleeps up to d; false when cancelled.
    bool pause(std::chrono::milliseconds d);

    std::uint64_t id_;
    CampaignPlan plan_;
    Session& session_;
    RuleTable& rules_;
    EventBus* events_;
    std::uint64_t rule_id_ = 0;

    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::vector<StepResult> results_;
    std::optional<std::string> error_;
    bool done_ = false;
    bool cancelled_ = false;
    std::thread thread_;
};

// Owns runs; at most one unfinished run per matcher.
class CampaignManager {
public:
    CampaignManager(Session& session, RuleTable& rules, EventBus* events)
        : session_(session), rules_(rules), events_(events) {}

    // Throws IllegalTransition when a run on the same matcher is active, plus
    // whatever CampaignRun throws.
    std::shared_ptr<CampaignRun> start(CampaignPlan plan);
    std::shared_ptr<CampaignRun> get(std::uint64_t id) const;
    std::vector<std::shared_ptr<CampaignRun>> list() const;
    void cancel_all();

private:
    Session& session_;
    RuleTable& rules_;
    EventBus* events_;
    mutable std::mutex mu_;
    std::uint64_t next_id_ = 1;
    std::map<std::uint64_t, std::shared_ptr<CampaignRun>> runs_;
};

}  // namespace mutproxy
