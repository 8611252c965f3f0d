#pragma once

// Versioning and caching detection.

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

#include "mutproxy/http.hpp"
#include "mutproxy/rules.hpp"
#include "mutproxy/session.hpp"

namespace mutproxy {

// Path segments first: "v<digits>" is UrlPath, "<digits>.<digits>[.<digits>]"
// (optionally 'v'-prefixed) is SemanticInUrl; the first such segment wins.
// Otherwise Accept (request) and Content-Type (either side) are checked
// for a version / v / api-version parameter or a vnd.* subtype carrying a
// version token. url may omit the scheme.
VersioningInfo detect_versioning(std::string_view url, const http::Headers& request_headers = {},
                                 const http::Headers& response_headers = {});

enum class Confidence { Suspected, Confirmed };
std::string_view to_string(Confidence c);

struct CachingEvidence {
    // Operator answer: did the marker mutation show up in the client?
    std::optional<bool> marker_visible;
    // Operator follow-up: did restarting the client clear the stale data?
    std::optional<bool> cleared_on_restart;
};

struct CachingVerdict {
    CachingKind kind = CachingKind::Unknown;
    Confidence confidence = Confidence::Suspected;
    std::string reason;
};

// Without an operator marker answer the verdict is always Suspected.
// Throws InsufficientEvidence when the session holds no mutated exchange and
// fewer than two requests for the endpoint, and no marker answer was given.
CachingVerdict assess_caching(const SessionData& session, const EndpointMatcher& matcher,
                              const CachingEvidence& evidence,
                              std::chrono::milliseconds window = std::chrono::seconds(30));

// Bodies at or below this size count as "short" for the checksum heuristic.
inline constexpr std::size_t kChecksumBodyLimit = 128;

}  // namespace mutproxy
