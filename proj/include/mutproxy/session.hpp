#pragma once

// Session store: captured exchanges, rule states, observations and target
// profiles, plus the line-delimited session file.
//
// Session file: one JSON object per line. The first line is
//   {"type":"header","format_version":1}
// followed by "exchange", "rule", "rule_deleted", "observation" and "profile"
// records. Later rule, profile and exchange records with the same key replace
// earlier ones, so a journal can be appended to while the session runs.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mutproxy/http.hpp"
#include "mutproxy/mutation.hpp"
#include "mutproxy/rules.hpp"

namespace mutproxy {

inline constexpr int kSessionFormatVersion = 1;

enum class Origin { Upstream, MutatedLocal };
std::string_view to_string(Origin o);

struct CapturedExchange {
    std::uint64_t id = 0;
    std::int64_t wall_ms = 0;   // unix epoch milliseconds
    std::int64_t mono_ns = 0;   // steady clock
    http::Request request;      // target holds the absolute URL
    http::Response response;
    Origin origin = Origin::Upstream;
    std::optional<std::uint64_t> rule_id;
    std::optional<MutationSpec> mutation;
    bool client_aborted = false;

    bool operator==(const CapturedExchange&) const = default;
};

enum class Behavior { NormalLoad, ForceClose, ErrorMessage, SilentFailure, IndefiniteLoading, GracefulTimeout };
inline constexpr Behavior kAllBehaviors[] = {Behavior::NormalLoad,    Behavior::ForceClose,
                                             Behavior::ErrorMessage,  Behavior::SilentFailure,
                                             Behavior::IndefiniteLoading, Behavior::GracefulTimeout};
std::string_view to_string(Behavior b);
std::string_view display_name(Behavior b);
Behavior behavior_from_string(std::string_view s);

struct AutoSignals {
    std::uint32_t retry_count = 0;
    std::optional<double> seconds_to_next_request;
    bool client_aborted = false;
    bool operator==(const AutoSignals&) const = default;
};

struct ObservationRecord {
    std::uint64_t exchange_id = 0;
    std::string target_name;
    MutationSpec mutation;
    Behavior behavior = Behavior::NormalLoad;
    std::string note;
    AutoSignals auto_signals;
    bool operator==(const ObservationRecord&) const = default;
};

enum class CachingKind { None, TimeBased, HashBased, SessionScoped, Unknown };
inline constexpr CachingKind kAllCachingKinds[] = {CachingKind::None, CachingKind::TimeBased, CachingKind::HashBased,
                                                   CachingKind::SessionScoped, CachingKind::Unknown};
std::string_view to_string(CachingKind k);
CachingKind caching_kind_from_string(std::string_view s);

enum class VersioningScheme { NoneDetected, UrlPath, SemanticInUrl, MediaTypeHeader };
inline constexpr VersioningScheme kAllVersioningSchemes[] = {
    VersioningScheme::NoneDetected, VersioningScheme::UrlPath, VersioningScheme::SemanticInUrl,
    VersioningScheme::MediaTypeHeader};
std::string_view to_string(VersioningScheme s);
VersioningScheme versioning_scheme_from_string(std::string_view s);

struct VersioningInfo {
    VersioningScheme scheme = VersioningScheme::NoneDetected;
    std::string token;
    bool operator==(const VersioningInfo&) const = default;
};

struct TargetProfile {
    std::string target_name;
    CachingKind caching = CachingKind::Unknown;
    VersioningInfo versioning;
    std::string notes;
    bool operator==(const TargetProfile&) const = default;
};

void to_json(nlohmann::json& j, const CapturedExchange& e);
void from_json(const nlohmann::json& j, CapturedExchange& e);
void to_json(nlohmann::json& j, const ObservationRecord& o);
void from_json(const nlohmann::json& j, ObservationRecord& o);
void to_json(nlohmann::json& j, const TargetProfile& p);
void from_json(const nlohmann::json& j, TargetProfile& p);
void to_json(nlohmann::json& j, const VersioningInfo& v);
void from_json(const nlohmann::json& j, VersioningInfo& v);

// Plain value form of a session, ordered by id / insertion.
struct SessionData {
    std::vector<CapturedExchange> exchanges;
    std::vector<RewriteRule> rules;  // by rule_id
    std::vector<ObservationRecord> observations;
    std::vector<TargetProfile> profiles;  // by target_name
    bool operator==(const SessionData&) const = default;
};

// {"type": type, ...fields of body}; the syntax of every session-file line.
nlohmann::json make_record(std::string_view type, const nlohmann::json& body);
// The fields of record without "type", which must equal type when present.
// Throws InvalidSpec.
nlohmann::json record_body(nlohmann::json record, std::string_view type);

void write_session(std::ostream& out, const SessionData& s);
// Throws CorruptSessionFile.
SessionData read_session(std::istream& in);

class Session {
public:
    Session() = default;
    explicit Session(SessionData data);
    ~Session();
    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    // Assigns the id, and the timestamps when they are 0.
    CapturedExchange append(CapturedExchange e);
    std::optional<CapturedExchange> exchange(std::uint64_t id) const;
    std::vector<CapturedExchange> exchanges(std::size_t offset = 0, std::size_t limit = SIZE_MAX) const;
    std::size_t exchange_count() const;
    void mark_client_aborted(std::uint64_t id);

    // Stores as given; see record_observation for the checked entry point.
    ObservationRecord add_observation(ObservationRecord o);
    std::vector<ObservationRecord> observations() const;
    std::size_t observation_count() const;
    // True once observation_count() >= count.
    bool wait_for_observations(std::size_t count, std::chrono::milliseconds timeout) const;

    void put_profile(TargetProfile p);
    std::optional<TargetProfile> profile(const std::string& name) const;
    std::vector<TargetProfile> profiles() const;

    void put_rule(const RewriteRule& r);
    void drop_rule(std::uint64_t id);
    std::optional<RewriteRule> rule(std::uint64_t id) const;
    std::vector<RewriteRule> rules() const;

    SessionData data() const;

    // Writes the current state to path, then appends every later change.
    void open_journal(const std::filesystem::path& path);

private:
    void journal(const nlohmann::json& record);

    mutable std::mutex mu_;
    mutable std::condition_variable observed_;
    std::vector<CapturedExchange> exchanges_;
    std::unordered_map<std::uint64_t, std::size_t> index_;
    std::uint64_t next_id_ = 1;
    std::map<std::uint64_t, RewriteRule> rules_;
    std::vector<ObservationRecord> observations_;
    std::map<std::string, TargetProfile> profiles_;
    std::ofstream journal_;
};

void export_session(const Session& s, const std::filesystem::path& path);
// Throws CorruptSessionFile, or Error when the file cannot be opened.
SessionData import_session(const std::filesystem::path& path);

// Checked observation entry: the exchange must exist and be MutatedLocal.
// Auto-signals count later requests hitting the same endpoint within window.
// Throws UnknownExchange, NotMutated.
ObservationRecord record_observation(Session& s, std::uint64_t exchange_id, Behavior behavior, std::string note,
                                     std::chrono::milliseconds window = std::chrono::seconds(30));

// Signal computation alone, over an exchange list in id order.
AutoSignals compute_auto_signals(const std::vector<CapturedExchange>& exchanges, const CapturedExchange& subject,
                                 const EndpointMatcher& matcher, std::chrono::milliseconds window);

// Matcher an exchange is judged against: its rule's matcher, else host+path.
EndpointMatcher endpoint_of(const CapturedExchange& e, const std::optional<RewriteRule>& rule);

std::string base64_encode(std::string_view bytes);
// Throws Error on invalid input.
std::string base64_decode(std::string_view text);
bool is_valid_utf8(std::string_view s);

}  // namespace mutproxy
