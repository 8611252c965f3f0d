#pragma once

// Aggregation of observations into an overview plus per-target findings.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mutproxy/mutation.hpp"
#include "mutproxy/session.hpp"

namespace mutproxy {

inline constexpr std::size_t kKindCount = std::size(kAllMutationKinds);
inline constexpr std::size_t kBehaviorCount = std::size(kAllBehaviors);

// Higher is more severe.
int severity(Behavior b);

struct Finding {
    std::uint64_t exchange_id = 0;
    MutationSpec mutation;
    Behavior behavior = Behavior::NormalLoad;
    std::string note;
    bool operator==(const Finding&) const = default;
};

struct TargetReport {
    std::string target_name;
    std::vector<Finding> findings;  // by (kind, exchange_id, behavior, note)
    TargetProfile profile;          // default profile when none was recorded
    bool operator==(const TargetReport&) const = default;
};

struct FragilityReport {
    // totals[kind][behavior]; each target adds at most one per kind.
    std::array<std::array<std::size_t, kBehaviorCount>, kKindCount> totals{};
    std::size_t target_count = 0;
    std::array<std::size_t, std::size(kAllCachingKinds)> caching_counts{};
    std::array<std::size_t, std::size(kAllVersioningSchemes)> versioning_counts{};
    std::vector<TargetReport> per_target;  // alphabetical

    std::size_t count(MutationKind k, Behavior b) const;
    std::size_t count(CachingKind k) const;
    std::size_t count(VersioningScheme s) const;
    bool operator==(const FragilityReport&) const = default;
};

// Throws InconsistentRecord when one target has two different behaviors for
// the same exchange.
FragilityReport aggregate(const std::vector<ObservationRecord>& observations,
                          const std::vector<TargetProfile>& profiles);
inline FragilityReport aggregate(const SessionData& s) { return aggregate(s.observations, s.profiles); }

enum class ReportFormat { PlainText, Markdown, Machine };
ReportFormat report_format_from_string(std::string_view s);

std::string render_report(const FragilityReport& r, ReportFormat format);
// Inverse of render_report(r, Machine). Throws InvalidSpec.
FragilityReport parse_machine_report(const std::string& text);

void to_json(nlohmann::json& j, const FragilityReport& r);
void from_json(const nlohmann::json& j, FragilityReport& r);

}  // namespace mutproxy
