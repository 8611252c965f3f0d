#include "mutproxy/campaign.hpp"

#include <set>

#include "mutproxy/errors.hpp"
#include "mutproxy/proxy.hpp"

namespace mutproxy {

using nlohmann::json;

void to_json(json& j, const CampaignPlan& p) {
    j = {{"name", p.name},
         {"target_name", p.target_name},
         {"matcher", p.matcher},
         {"steps", p.steps},
         {"per_step_wait", p.per_step_wait},
         {"capture_baseline", p.capture_baseline}};
}

void from_json(const json& j, CampaignPlan& p) {
    static const std::set<std::string> known = {"name",          "target_name", "matcher", "steps",
                                                "per_step_wait", "capture_baseline"};
    if (!j.is_object()) throw InvalidSpec("campaign plan must be an object");
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) throw InvalidSpec("unknown campaign field: " + key);
    if (!j.contains("matcher")) throw InvalidSpec("campaign requires a matcher");
    if (!j.contains("steps")) throw InvalidSpec("campaign requires steps");
    CampaignPlan out;
    try {
        out.name = j.value("name", "");
        out.target_name = j.value("target_name", "");
        out.matcher = j.at("matcher").get<EndpointMatcher>();
        out.steps = j.at("steps").get<std::vector<MutationSpec>>();
        out.per_step_wait = j.value("per_step_wait", 60.0);
        out.capture_baseline = j.value("capture_baseline", false);
    } catch (const InvalidSpec&) {
        throw;
    } catch (const std::exception& e) {
        throw InvalidSpec(std::string("bad campaign: ") + e.what());
    }
    if (out.steps.empty()) throw InvalidSpec("campaign needs at least one step");
    if (!(out.per_step_wait > 0)) throw InvalidSpec("per_step_wait must be positive");
    p = std::move(out);
}

std::string_view to_string(StepStatus s) {
    switch (s) {
        case StepStatus::Pending: return "pending";
        case StepStatus::Active: return "active";
        case StepStatus::Observed: return "observed";
        case StepStatus::TimedOut: return "timed_out";
        case StepStatus::Failed: return "failed";
        case StepStatus::Cancelled: return "cancelled";
    }
    return "pending";
}

void to_json(json& j, const StepResult& r) {
    j = {{"index", r.index},
         {"spec", r.spec},
         {"status", to_string(r.status)},
         {"error", r.error},
         {"exchange_ids", r.exchange_ids},
         {"behavior", r.behavior ? json(to_string(*r.behavior)) : json(nullptr)}};
}

std::optional<CapturedExchange> find_baseline(const Session& session, const EndpointMatcher& m) {
    auto all = session.exchanges();
    for (auto it = all.rbegin(); it != all.rend(); ++it) {
        if (it->origin != Origin::Upstream || it->response.status < 200 || it->response.status > 299) continue;
        auto key = RequestKey::from_url(it->request.method, it->request.target);
        if (key && m.matches(*key)) return *it;
    }
    return std::nullopt;
}

namespace {

void validate_plan(const CampaignPlan& p) {
    if (p.steps.empty()) throw InvalidSpec("campaign needs at least one step");
    if (!(p.per_step_wait > 0)) throw InvalidSpec("per_step_wait must be positive");
    if (p.matcher.host.empty() || p.matcher.path.empty() || p.matcher.path.front() != '/')
        throw InvalidSpec("campaign matcher needs a host and an absolute path");
}

}  // namespace

CampaignRun::CampaignRun(std::uint64_t id, CampaignPlan plan, Session& session, RuleTable& rules, EventBus* events)
    : id_(id), plan_(std::move(plan)), session_(session), rules_(rules), events_(events) {
    validate_plan(plan_);
    RewriteRule r;
    r.matcher = plan_.matcher;
    r.target_name = plan_.target_name;
    if (plan_.capture_baseline) {
        r.mode = RuleMode::CaptureNext;
    } else {
        auto baseline = find_baseline(session_, plan_.matcher);
        if (!baseline) throw NoBaseline("no recorded 2xx response for " + plan_.matcher.host + plan_.matcher.path);
        r.baseline_id = baseline->id;
        r.mode = RuleMode::PassThrough;
    }
    rule_id_ = rules_.add(r).rule_id;
    for (std::size_t i = 0; i < plan_.steps.size(); ++i) results_.push_back({i, plan_.steps[i], StepStatus::Pending, {}, {}, std::nullopt});
    thread_ = std::thread([this] { run(); });
}

CampaignRun::~CampaignRun() {
    cancel();
    if (thread_.joinable()) thread_.join();
}

bool CampaignRun::wait(std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    return cv_.wait_for(lock, timeout, [&] { return done_; });
}

bool CampaignRun::finished() const {
    std::lock_guard lock(mu_);
    return done_;
}

void CampaignRun::cancel() {
    {
        std::lock_guard lock(mu_);
        cancelled_ = true;
    }
    cv_.notify_all();
}

std::vector<StepResult> CampaignRun::results() const {
    std::lock_guard lock(mu_);
    return results_;
}

std::optional<std::string> CampaignRun::error() const {
    std::lock_guard lock(mu_);
    return error_;
}

json CampaignRun::status() const {
    std::lock_guard lock(mu_);
    return {{"campaign_id", id_},
            {"plan", plan_},
            {"rule_id", rule_id_},
            {"finished", done_},
            {"error", error_ ? json(*error_) : json(nullptr)},
            {"steps", results_}};
}

void CampaignRun::emit(const std::string& type, json data) {
    data["campaign_id"] = id_;
    data["rule_id"] = rule_id_;
    if (events_) events_->publish(type, std::move(data));
}

bool CampaignRun::pause(std::chrono::milliseconds d) {
    std::unique_lock lock(mu_);
    return !cv_.wait_for(lock, d, [&] { return cancelled_; });
}

void CampaignRun::run() {
    const auto step_wait = std::chrono::milliseconds(static_cast<std::int64_t>(plan_.per_step_wait * 1000));
    const auto poll = std::chrono::milliseconds(20);
    auto set_step = [&](std::size_t i, auto&& edit) {
        std::lock_guard lock(mu_);
        edit(results_[i]);
    };
    try {
        std::optional<std::uint64_t> baseline_id;
        const auto capture_deadline = std::chrono::steady_clock::now() + step_wait;
        while (true) {
            auto r = rules_.get(rule_id_);
            if (!r) throw UnknownRule(rule_id_);
            if (r->baseline_id) {
                baseline_id = r->baseline_id;
                break;
            }
            if (std::chrono::steady_clock::now() >= capture_deadline)
                throw NoBaseline("no baseline captured within the step wait");
            if (!pause(poll)) break;
        }
        std::optional<CapturedExchange> baseline;
        if (baseline_id) {
            baseline = session_.exchange(*baseline_id);
            if (!baseline) throw NoBaseline("baseline exchange " + std::to_string(*baseline_id) + " is missing");
        }

        for (std::size_t i = 0; i < plan_.steps.size(); ++i) {
            {
                std::lock_guard lock(mu_);
                if (cancelled_) {
                    for (std::size_t k = i; k < results_.size(); ++k) results_[k].status = StepStatus::Cancelled;
                    break;
                }
            }
            const auto& spec = plan_.steps[i];
            auto probe = *rules_.get(rule_id_);
            probe.spec = spec;
            probe.mode = RuleMode::Rewrite;
            if (auto check = rewrite_response(probe, *baseline); check.failure) {
                set_step(i, [&](StepResult& s) {
                    s.status = StepStatus::Failed;
                    s.error = *check.failure;
                });
                emit("campaign-step",
                     {{"index", i}, {"phase", "ended"}, {"status", "failed"}, {"spec", spec}, {"error", *check.failure}});
                continue;
            }

            const auto seen_before = session_.observation_count();
            const auto exchanges_before = session_.exchange_count();
            rules_.update(rule_id_, [&](RewriteRule& r) {
                r.spec = spec;
                r.mode = RuleMode::Rewrite;
                r.enabled = true;
            });
            set_step(i, [](StepResult& s) { s.status = StepStatus::Active; });
            emit("campaign-step", {{"index", i}, {"phase", "started"}, {"status", "active"}, {"spec", spec}});

            std::optional<Behavior> behavior;
            bool cancelled = false;
            std::size_t scanned = seen_before;
            const auto deadline = std::chrono::steady_clock::now() + step_wait;
            while (!behavior) {
                auto obs = session_.observations();
                for (; scanned < obs.size() && !behavior; ++scanned) {
                    auto ex = session_.exchange(obs[scanned].exchange_id);
                    if (ex && ex->rule_id == rule_id_ && ex->mutation == spec) behavior = obs[scanned].behavior;
                }
                if (behavior) break;
                const auto now = std::chrono::steady_clock::now();
                if (now >= deadline) break;
                session_.wait_for_observations(
                    scanned + 1, std::min(poll, std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now)));
                std::lock_guard lock(mu_);
                if (cancelled_) {
                    cancelled = true;
                    break;
                }
            }

            std::vector<std::uint64_t> ids;
            for (const auto& e : session_.exchanges(exchanges_before))
                if (e.rule_id == rule_id_ && e.origin == Origin::MutatedLocal) ids.push_back(e.id);
            const auto status =
                behavior ? StepStatus::Observed : (cancelled ? StepStatus::Cancelled : StepStatus::TimedOut);
            set_step(i, [&](StepResult& s) {
                s.status = status;
                s.exchange_ids = ids;
                s.behavior = behavior;
            });
            emit("campaign-step", {{"index", i},
                                   {"phase", "ended"},
                                   {"status", to_string(status)},
                                   {"spec", spec},
                                   {"exchange_ids", ids},
                                   {"behavior", behavior ? json(to_string(*behavior)) : json(nullptr)}});
        }
    } catch (const std::exception& e) {
        std::lock_guard lock(mu_);
        error_ = e.what();
        for (auto& s : results_)
            if (s.status == StepStatus::Pending || s.status == StepStatus::Active) s.status = StepStatus::Cancelled;
    }
    try {
        rules_.update(rule_id_, [](RewriteRule& r) { r.enabled = false; });
    } catch (const std::exception&) {
        // The operator may have deleted the rule meanwhile.
    }
    {
        std::lock_guard lock(mu_);
        json data = {{"error", error_ ? json(*error_) : json(nullptr)}};
        std::size_t observed = 0;
        for (const auto& s : results_) observed += s.status == StepStatus::Observed;
        data["observed"] = observed;
        data["steps"] = results_.size();
        if (events_) {
            data["campaign_id"] = id_;
            data["rule_id"] = rule_id_;
            events_->publish("campaign-finished", std::move(data));
        }
        done_ = true;
    }
    cv_.notify_all();
}

std::shared_ptr<CampaignRun> CampaignManager::start(CampaignPlan plan) {
    std::lock_guard lock(mu_);
    for (const auto& [_, run] : runs_)
        if (!run->finished() && run->plan().matcher == plan.matcher)
            throw IllegalTransition("a campaign is already running on " + plan.matcher.host + plan.matcher.path);
    const auto id = next_id_;
    auto run = std::make_shared<CampaignRun>(id, std::move(plan), session_, rules_, events_);
    ++next_id_;
    runs_.emplace(id, run);
    return run;
}

std::shared_ptr<CampaignRun> CampaignManager::get(std::uint64_t id) const {
    std::lock_guard lock(mu_);
    auto it = runs_.find(id);
    return it == runs_.end() ? nullptr : it->second;
}

std::vector<std::shared_ptr<CampaignRun>> CampaignManager::list() const {
    std::lock_guard lock(mu_);
    std::vector<std::shared_ptr<CampaignRun>> out;
    for (const auto& [_, r] : runs_) out.push_back(r);
    return out;
}

void CampaignManager::cancel_all() {
    for (const auto& r : list()) r->cancel();
}

}  // namespace mutproxy
