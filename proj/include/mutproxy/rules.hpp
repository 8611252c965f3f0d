#pragma once

// Endpoint matching and the shared rewrite-rule table.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mutproxy/http.hpp"
#include "mutproxy/mutation.hpp"

namespace mutproxy {

// The parts of a request a matcher looks at, already normalized.
struct RequestKey {
    std::string method;
    std::string host;  // lower-case, no port
    std::uint16_t port = 80;
    std::string path;  // percent-decoded
    std::vector<std::pair<std::string, std::string>> query;  // decoded pairs

    // From an absolute URL ("http://h/p?q").
    static std::optional<RequestKey> from_url(std::string_view method, std::string_view url);
};

struct EndpointMatcher {
    std::string host;  // "name" or "name:port"; a bare name matches any port
    std::string path;
    // Query keys that must be present with exactly these values.
    std::map<std::string, std::string> include_query_keys;
    std::optional<std::string> method;

    bool matches(const RequestKey& req) const;
    // method+query (3) > query (2) > method (1) > bare (0)
    int specificity() const;

    bool operator==(const EndpointMatcher&) const = default;
};

void to_json(nlohmann::json& j, const EndpointMatcher& m);
void from_json(const nlohmann::json& j, EndpointMatcher& m);

enum class RuleMode { CaptureNext, Rewrite, PassThrough };
std::string_view to_string(RuleMode m);
RuleMode rule_mode_from_string(std::string_view s);

// Replaces one string value in the baseline with a sentinel before the spec
// is applied. Used to probe whether the client renders fresh data at all.
struct MarkerProbe {
    std::string path;
    std::string sentinel;
    bool operator==(const MarkerProbe&) const = default;
};

struct RewriteRule {
    std::uint64_t rule_id = 0;
    std::string target_name;  // defaults to matcher.host
    EndpointMatcher matcher;
    std::optional<std::uint64_t> baseline_id;
    std::optional<MutationSpec> spec;
    bool enabled = true;
    RuleMode mode = RuleMode::CaptureNext;
    // On capture, go to Rewrite instead of PassThrough.
    bool rewrite_after_capture = false;
    // Still send matching requests upstream in Rewrite mode, discarding the reply.
    bool forward_and_discard = false;
    std::optional<MarkerProbe> marker;

    bool operator==(const RewriteRule&) const = default;
};

void to_json(nlohmann::json& j, const RewriteRule& r);
void from_json(const nlohmann::json& j, RewriteRule& r);

// Throws IllegalTransition when the rule's mode cannot hold (Rewrite without a
// baseline or without anything to apply).
void validate_rule(const RewriteRule& r);

// Returns the enabled rule with the most specific matching matcher, ties to
// the lowest rule_id.
std::optional<RewriteRule> match_rule(const RequestKey& req, const std::vector<RewriteRule>& rules);

class RuleTable {
public:
    using Snapshot = std::shared_ptr<const std::vector<RewriteRule>>;
    // Called for every change while the table is still locked, so it must not
    // call back into the table. change is "added", "updated", "captured" or
    // "deleted".
    using Listener = std::function<void(const RewriteRule&, std::string_view change)>;

    RuleTable();

    Snapshot snapshot() const;
    std::vector<RewriteRule> list() const { return *snapshot(); }
    std::optional<RewriteRule> get(std::uint64_t id) const;

    // Assigns rule_id when it is 0. Throws IllegalTransition.
    RewriteRule add(RewriteRule r);
    // Applies edit to a copy and validates it. Throws UnknownRule, IllegalTransition.
    RewriteRule update(std::uint64_t id, const std::function<void(RewriteRule&)>& edit);
    // Throws UnknownRule.
    void remove(std::uint64_t id);
    // Restores rules read from a session file, keeping their ids.
    void restore(const std::vector<RewriteRule>& rules);

    // Atomically moves a CaptureNext rule to its post-capture mode with the
    // given baseline. Exactly one caller wins for a given arming.
    std::optional<RewriteRule> try_capture(std::uint64_t id, std::uint64_t baseline_id);

    void set_listener(Listener l);

private:
    RewriteRule commit(std::vector<RewriteRule> next, std::size_t changed, std::string_view change);

    mutable std::shared_mutex mu_;
    Snapshot rules_;
    std::uint64_t next_id_ = 1;
    Listener listener_;
    std::mutex listener_mu_;
};

}  // namespace mutproxy
