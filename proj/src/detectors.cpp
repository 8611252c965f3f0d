#include "mutproxy/detectors.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <regex>
#include <set>

#include "mutproxy/errors.hpp"

namespace mutproxy {

namespace {

std::string_view path_of(std::string_view url) {
    if (auto scheme = url.find("://"); scheme != std::string_view::npos) url.remove_prefix(scheme + 3);
    auto slash = url.find('/');
    if (slash == std::string_view::npos) return {};
    url.remove_prefix(slash);
    return url.substr(0, url.find_first_of("?#"));
}

const std::regex kUrlPathVersion(R"([vV]\d+)");
const std::regex kSemanticVersion(R"([vV]?(\d+\.\d+(?:\.\d+)?))");
const std::regex kVersionParam(R"re(^\s*(?:version|v|api-version)\s*=\s*"?([^";,\s]+)"?\s*$)re", std::regex::icase);
const std::regex kVndToken(R"((?:^|[.\-_])(v\d+(?:\.\d+)*|version\d+(?:\.\d+)*)(?=$|[.\-_+]))", std::regex::icase);

std::optional<std::string> media_type_version(std::string_view value) {
    // A header may carry several media ranges (Accept).
    std::size_t start = 0;
    std::string v(value);
    while (start <= v.size()) {
        auto comma = v.find(',', start);
        std::string range = v.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        std::vector<std::string> parts;
        std::size_t p = 0;
        while (true) {
            auto semi = range.find(';', p);
            parts.push_back(range.substr(p, semi == std::string::npos ? std::string::npos : semi - p));
            if (semi == std::string::npos) break;
            p = semi + 1;
        }
        for (std::size_t k = 1; k < parts.size(); ++k) {
            std::smatch m;
            if (std::regex_match(parts[k], m, kVersionParam)) return m[1].str();
        }
        const std::string& type = parts[0];
        auto slash = type.find('/');
        if (slash != std::string::npos) {
            std::string subtype = type.substr(slash + 1);
            while (!subtype.empty() && std::isspace(static_cast<unsigned char>(subtype.back()))) subtype.pop_back();
            if (subtype.rfind("vnd.", 0) == 0 || subtype.rfind("VND.", 0) == 0) {
                std::smatch m;
                if (std::regex_search(subtype, m, kVndToken)) return m[1].str();
            }
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return std::nullopt;
}

}  // namespace

VersioningInfo detect_versioning(std::string_view url, const http::Headers& request_headers,
                                 const http::Headers& response_headers) {
    std::string path = http::percent_decode(path_of(url));
    std::size_t pos = 0;
    while (pos < path.size()) {
        auto next = path.find('/', pos + 1);
        std::string seg = path.substr(pos + 1, next == std::string::npos ? std::string::npos : next - pos - 1);
        std::smatch m;
        if (std::regex_match(seg, kUrlPathVersion)) return {VersioningScheme::UrlPath, seg};
        if (std::regex_match(seg, m, kSemanticVersion)) return {VersioningScheme::SemanticInUrl, m[1].str()};
        if (next == std::string::npos) break;
        pos = next;
    }
    for (const auto* h : {&request_headers, &response_headers}) {
        for (const auto& f : *h) {
            const bool accept = h == &request_headers && http::iequals(f.name, "Accept");
            if (!accept && !http::iequals(f.name, "Content-Type")) continue;
            if (auto token = media_type_version(f.value)) return {VersioningScheme::MediaTypeHeader, *token};
        }
    }
    return {};
}

std::string_view to_string(Confidence c) { return c == Confidence::Confirmed ? "confirmed" : "suspected"; }

namespace {

std::optional<RequestKey> key_of(const CapturedExchange& e) {
    return RequestKey::from_url(e.request.method, e.request.target);
}

// A short, repeated response on another path of the same host that directly
// precedes requests to the matcher's endpoint.
bool checksum_pattern(const SessionData& s, const EndpointMatcher& matcher) {
    std::map<std::string, std::vector<const CapturedExchange*>> by_path;
    std::set<std::string> precedes_data;
    std::optional<std::string> last_other_path;
    std::string host = http::split_host_port(matcher.host, 0).first;
    std::transform(host.begin(), host.end(), host.begin(), [](unsigned char c) { return std::tolower(c); });
    for (const auto& e : s.exchanges) {
        auto k = key_of(e);
        if (!k || k->host != host) continue;
        if (matcher.matches(*k)) {
            if (last_other_path) precedes_data.insert(*last_other_path);
            last_other_path.reset();
        } else {
            by_path[k->path].push_back(&e);
            last_other_path = k->path;
        }
    }
    for (const auto& path : precedes_data) {
        const auto& list = by_path[path];
        if (list.size() < 2) continue;
        bool short_bodies = std::all_of(list.begin(), list.end(), [](const CapturedExchange* e) {
            return e->response.body.size() <= kChecksumBodyLimit;
        });
        std::set<std::string> bodies;
        for (const auto* e : list) bodies.insert(e->response.body);
        if (short_bodies && bodies.size() < list.size()) return true;
    }
    return false;
}

}  // namespace

CachingVerdict assess_caching(const SessionData& session, const EndpointMatcher& matcher,
                              const CachingEvidence& evidence, std::chrono::milliseconds window) {
    std::vector<const CapturedExchange*> matching;
    std::vector<const CapturedExchange*> mutated;
    for (const auto& e : session.exchanges) {
        auto k = key_of(e);
        if (!k || !matcher.matches(*k)) continue;
        matching.push_back(&e);
        if (e.origin == Origin::MutatedLocal) mutated.push_back(&e);
    }
    if (mutated.empty() && matching.size() < 2 && !evidence.marker_visible)
        throw InsufficientEvidence("no mutated exchange and fewer than two requests for " + matcher.host +
                                   matcher.path);

    const bool checksum = checksum_pattern(session, matcher);
    bool refetched = false;
    if (!mutated.empty()) {
        auto signals = compute_auto_signals(session.exchanges, *mutated.back(), matcher, window);
        refetched = signals.retry_count > 0;
    }

    if (evidence.marker_visible == true)
        return {CachingKind::None, Confidence::Confirmed, "marker visible in the client"};
    if (evidence.marker_visible == false) {
        if (evidence.cleared_on_restart == true)
            return {CachingKind::SessionScoped, Confidence::Confirmed, "stale data cleared by a client restart"};
        if (checksum)
            return {CachingKind::HashBased, Confidence::Confirmed,
                    "marker not shown; a short repeated response precedes data requests"};
        std::string reason = refetched ? "marker not shown although the client requested again"
                                       : "marker not shown and no fresh request within the window";
        return {CachingKind::TimeBased,
                evidence.cleared_on_restart == false ? Confidence::Confirmed : Confidence::Suspected, reason};
    }
    if (checksum)
        return {CachingKind::HashBased, Confidence::Suspected, "a short repeated response precedes data requests"};
    return {CachingKind::Unknown, Confidence::Suspected, "no marker answer recorded"};
}

}  // namespace mutproxy
