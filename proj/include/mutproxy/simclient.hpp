#pragma once

// Scripted stand-in for a client application. It fetches an endpoint,
// classifies the response against the body it expects, and reacts per a
// fragility matrix. Each reaction is one log line:
//
//   <tick_ms>,<cycle>,<detected mutation or none>,<reaction>
//
// The hang reaction blocks forever after logging; crash exits with
// kCrashExitCode.

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mutproxy/document.hpp"
#include "mutproxy/mutation.hpp"
#include "mutproxy/session.hpp"

namespace mutproxy {

enum class Reaction { NormalLoad, Crash, ErrorMessage, SilentFailure, Hang, Timeout };
inline constexpr Reaction kAllReactions[] = {Reaction::NormalLoad,    Reaction::Crash, Reaction::ErrorMessage,
                                             Reaction::SilentFailure, Reaction::Hang,  Reaction::Timeout};
std::string_view to_string(Reaction r);
Reaction reaction_from_string(std::string_view s);
// The observation an operator would record for the reaction.
Behavior behavior_for(Reaction r);

inline constexpr int kCrashExitCode = 11;

struct FragilityMatrix {
    // Kinds not listed load normally.
    std::map<MutationKind, Reaction> reactions;
    Reaction react(std::optional<MutationKind> detected) const;
    bool operator==(const FragilityMatrix&) const = default;
};
// {"field_removal": "crash", ...} naming every kind; missing or unknown kinds
// and unknown reactions throw InvalidSpec.
void to_json(nlohmann::json& j, const FragilityMatrix& m);
void from_json(const nlohmann::json& j, FragilityMatrix& m);

// Which operator most plausibly produced `actual` from `expected`:
// empty body, then unparsable, then (for structurally equal trees) a byte
// difference, then missing paths, extra paths and changed scalar types.
// nullopt when nothing differs.
std::optional<MutationKind> detect_mutation(std::string_view expected, Format format, std::string_view actual);

struct LogLine {
    std::int64_t tick_ms = 0;
    std::uint32_t cycle = 0;
    std::optional<MutationKind> detected;
    std::string reaction;  // a Reaction id, "retry" or "baseline"
    bool operator==(const LogLine&) const = default;
};
std::string format_log_line(const LogLine& l);
// Throws InvalidSpec.
LogLine parse_log_line(std::string_view line);
std::vector<LogLine> read_log(std::istream& in);

struct SimOptions {
    std::string url;  // absolute http URL of the endpoint
    std::optional<std::string> proxy;  // "host:port"; direct when unset
    FragilityMatrix matrix;
    // Body the client expects; the first response when unset.
    std::optional<std::string> expected;
    std::optional<Format> format;  // sniffed from the expectation when unset
    std::uint32_t cycles = 1;
    std::chrono::milliseconds interval{100};
    std::uint32_t timeout_retries = 2;
    std::chrono::milliseconds request_timeout{10000};
};

// Returns the process exit code. Never returns after a Hang reaction.
// Throws ProxyUnreachable when a connection cannot be made.
// Renders the fields of normally loaded responses to `echo`.
int run_simclient(const SimOptions& opts, std::ostream& log, std::ostream& echo);

}  // namespace mutproxy
