#include "mutproxy/rules.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "mutproxy/errors.hpp"

namespace mutproxy {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, std::string_view what) {
    if (!j.is_object()) throw InvalidSpec(std::string(what) + " must be an object");
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) throw InvalidSpec("unknown " + std::string(what) + " field: " + key);
}

}  // namespace

std::optional<RequestKey> RequestKey::from_url(std::string_view method, std::string_view url) {
    auto u = http::Url::parse(url);
    if (!u) return std::nullopt;
    RequestKey k;
    k.method = std::string(method);
    k.host = lower(u->host);
    k.port = u->port;
    k.path = http::percent_decode(u->path);
    k.query = http::parse_query(u->query);
    return k;
}

bool EndpointMatcher::matches(const RequestKey& req) const {
    auto [mhost, mport] = http::split_host_port(host, 0);
    if (lower(mhost) != req.host) return false;
    if (mport != 0 && mport != req.port) return false;
    if (http::percent_decode(path) != req.path) return false;
    if (method && *method != req.method) return false;
    for (const auto& [key, value] : include_query_keys) {
        auto it = std::find_if(req.query.begin(), req.query.end(), [&](const auto& kv) { return kv.first == key; });
        if (it == req.query.end() || it->second != value) return false;
    }
    return true;
}

int EndpointMatcher::specificity() const {
    return (include_query_keys.empty() ? 0 : 2) + (method ? 1 : 0);
}

void to_json(nlohmann::json& j, const EndpointMatcher& m) {
    j = nlohmann::json{{"host", m.host}, {"path", m.path}};
    if (!m.include_query_keys.empty()) j["include_query_keys"] = m.include_query_keys;
    if (m.method) j["method"] = *m.method;
}

void from_json(const nlohmann::json& j, EndpointMatcher& m) {
    reject_unknown(j, {"host", "path", "include_query_keys", "method"}, "matcher");
    try {
        EndpointMatcher out;
        out.host = j.at("host").get<std::string>();
        out.path = j.at("path").get<std::string>();
        if (j.contains("include_query_keys"))
            out.include_query_keys = j["include_query_keys"].get<std::map<std::string, std::string>>();
        if (j.contains("method") && !j["method"].is_null()) out.method = j["method"].get<std::string>();
        if (out.host.empty()) throw InvalidSpec("matcher host must not be empty");
        if (out.path.empty() || out.path.front() != '/') throw InvalidSpec("matcher path must start with '/'");
        m = std::move(out);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidSpec(std::string("bad matcher: ") + e.what());
    }
}

std::string_view to_string(RuleMode m) {
    switch (m) {
        case RuleMode::CaptureNext: return "capture_next";
        case RuleMode::Rewrite: return "rewrite";
        case RuleMode::PassThrough: return "pass_through";
    }
    return "?";
}

RuleMode rule_mode_from_string(std::string_view s) {
    for (auto m : {RuleMode::CaptureNext, RuleMode::Rewrite, RuleMode::PassThrough})
        if (to_string(m) == s) return m;
    throw InvalidSpec("unknown rule mode: " + std::string(s));
}

void to_json(nlohmann::json& j, const RewriteRule& r) {
    j = nlohmann::json{
        {"rule_id", r.rule_id},
        {"target_name", r.target_name},
        {"matcher", r.matcher},
        {"baseline_id", r.baseline_id ? nlohmann::json(*r.baseline_id) : nlohmann::json(nullptr)},
        {"spec", r.spec ? nlohmann::json(*r.spec) : nlohmann::json(nullptr)},
        {"enabled", r.enabled},
        {"mode", to_string(r.mode)},
        {"rewrite_after_capture", r.rewrite_after_capture},
        {"forward_and_discard", r.forward_and_discard},
    };
    if (r.marker) j["marker"] = {{"path", r.marker->path}, {"sentinel", r.marker->sentinel}};
    else j["marker"] = nullptr;
}

void from_json(const nlohmann::json& j, RewriteRule& r) {
    reject_unknown(j,
                   {"rule_id", "target_name", "matcher", "baseline_id", "spec", "enabled", "mode",
                    "rewrite_after_capture", "forward_and_discard", "marker"},
                   "rule");
    if (!j.contains("matcher")) throw InvalidSpec("rule requires a matcher");
    RewriteRule out;
    try {
        out.matcher = j["matcher"].get<EndpointMatcher>();
        if (j.contains("rule_id")) out.rule_id = j["rule_id"].get<std::uint64_t>();
        out.target_name = j.value("target_name", std::string());
        if (j.contains("baseline_id") && !j["baseline_id"].is_null())
            out.baseline_id = j["baseline_id"].get<std::uint64_t>();
        if (j.contains("spec") && !j["spec"].is_null()) out.spec = j["spec"].get<MutationSpec>();
        out.enabled = j.value("enabled", true);
        if (j.contains("mode")) out.mode = rule_mode_from_string(j["mode"].get<std::string>());
        else out.mode = out.baseline_id && out.spec ? RuleMode::Rewrite : RuleMode::CaptureNext;
        out.rewrite_after_capture = j.value("rewrite_after_capture", false);
        out.forward_and_discard = j.value("forward_and_discard", false);
        if (j.contains("marker") && !j["marker"].is_null()) {
            const auto& mk = j["marker"];
            reject_unknown(mk, {"path", "sentinel"}, "marker");
            out.marker = MarkerProbe{mk.at("path").get<std::string>(), mk.at("sentinel").get<std::string>()};
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidSpec(std::string("bad rule: ") + e.what());
    }
    if (out.target_name.empty()) out.target_name = http::split_host_port(out.matcher.host, 80).first;
    r = std::move(out);
}

void validate_rule(const RewriteRule& r) {
    if (r.mode != RuleMode::Rewrite) return;
    if (!r.baseline_id) throw IllegalTransition("rule " + std::to_string(r.rule_id) + ": rewrite needs a baseline");
    if (!r.spec && !r.marker)
        throw IllegalTransition("rule " + std::to_string(r.rule_id) + ": rewrite needs a spec or marker");
}

std::optional<RewriteRule> match_rule(const RequestKey& req, const std::vector<RewriteRule>& rules) {
    const RewriteRule* best = nullptr;
    for (const auto& r : rules) {
        if (!r.enabled || !r.matcher.matches(req)) continue;
        if (!best || r.matcher.specificity() > best->matcher.specificity() ||
            (r.matcher.specificity() == best->matcher.specificity() && r.rule_id < best->rule_id))
            best = &r;
    }
    if (!best) return std::nullopt;
    return *best;
}

RuleTable::RuleTable() : rules_(std::make_shared<const std::vector<RewriteRule>>()) {}

RuleTable::Snapshot RuleTable::snapshot() const {
    std::shared_lock lock(mu_);
    return rules_;
}

std::optional<RewriteRule> RuleTable::get(std::uint64_t id) const {
    auto snap = snapshot();
    for (const auto& r : *snap)
        if (r.rule_id == id) return r;
    return std::nullopt;
}

void RuleTable::set_listener(Listener l) {
    std::lock_guard lock(listener_mu_);
    listener_ = std::move(l);
}

RewriteRule RuleTable::commit(std::vector<RewriteRule> next, std::size_t changed, std::string_view change) {
    RewriteRule result = next[changed];
    if (change == "deleted") next.erase(next.begin() + static_cast<long>(changed));
    rules_ = std::make_shared<const std::vector<RewriteRule>>(std::move(next));
    // Still under the write lock, so no reader sees the change before the listener does.
    std::lock_guard lock(listener_mu_);
    if (listener_) listener_(result, change);
    return result;
}

RewriteRule RuleTable::add(RewriteRule r) {
    if (r.target_name.empty()) r.target_name = http::split_host_port(r.matcher.host, 80).first;
    RewriteRule stored;
    {
        std::unique_lock lock(mu_);
        if (r.rule_id == 0) r.rule_id = next_id_;
        for (const auto& existing : *rules_)
            if (existing.rule_id == r.rule_id)
                throw IllegalTransition("rule " + std::to_string(r.rule_id) + " already exists");
        validate_rule(r);
        next_id_ = std::max(next_id_, r.rule_id + 1);
        auto next = *rules_;
        next.push_back(std::move(r));
        const auto index = rules_->size();
        stored = commit(std::move(next), index, "added");
    }
    return stored;
}

RewriteRule RuleTable::update(std::uint64_t id, const std::function<void(RewriteRule&)>& edit) {
    RewriteRule stored;
    {
        std::unique_lock lock(mu_);
        auto next = *rules_;
        auto it = std::find_if(next.begin(), next.end(), [&](const RewriteRule& r) { return r.rule_id == id; });
        if (it == next.end()) throw UnknownRule(id);
        RewriteRule copy = *it;
        edit(copy);
        copy.rule_id = id;
        validate_rule(copy);
        *it = std::move(copy);
        const auto index = static_cast<std::size_t>(it - next.begin());
        stored = commit(std::move(next), index, "updated");
    }
    return stored;
}

void RuleTable::remove(std::uint64_t id) {
    std::unique_lock lock(mu_);
    auto next = *rules_;
    auto it = std::find_if(next.begin(), next.end(), [&](const RewriteRule& r) { return r.rule_id == id; });
    if (it == next.end()) throw UnknownRule(id);
    const auto index = static_cast<std::size_t>(it - next.begin());
    commit(std::move(next), index, "deleted");
}

void RuleTable::restore(const std::vector<RewriteRule>& rules) {
    std::unique_lock lock(mu_);
    auto next = rules;
    for (const auto& r : next) next_id_ = std::max(next_id_, r.rule_id + 1);
    rules_ = std::make_shared<const std::vector<RewriteRule>>(std::move(next));
}

std::optional<RewriteRule> RuleTable::try_capture(std::uint64_t id, std::uint64_t baseline_id) {
    RewriteRule stored;
    {
        std::unique_lock lock(mu_);
        auto next = *rules_;
        auto it = std::find_if(next.begin(), next.end(), [&](const RewriteRule& r) { return r.rule_id == id; });
        if (it == next.end() || it->mode != RuleMode::CaptureNext || !it->enabled) return std::nullopt;
        it->baseline_id = baseline_id;
        it->mode = it->rewrite_after_capture && (it->spec || it->marker) ? RuleMode::Rewrite : RuleMode::PassThrough;
        it->rewrite_after_capture = false;
        const auto index = static_cast<std::size_t>(it - next.begin());
        stored = commit(std::move(next), index, "captured");
    }
    return stored;
}

}  // namespace mutproxy
