#pragma once

// The six response mutation operators.
//
// Every operator is a pure function of its inputs: the same baseline and spec
// always produce byte-identical output.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mutproxy/document.hpp"
#include "mutproxy/path.hpp"

namespace mutproxy {

// Declaration order is the canonical listing order used by reports.
enum class MutationKind { FieldAddition, FieldRemoval, MalformedResponse, EmptyResponse, TypeChange, FormatDisruption };

inline constexpr MutationKind kAllMutationKinds[] = {
    MutationKind::FieldAddition,     MutationKind::FieldRemoval, MutationKind::MalformedResponse,
    MutationKind::EmptyResponse,     MutationKind::TypeChange,   MutationKind::FormatDisruption,
};

std::string_view to_string(MutationKind k);
MutationKind mutation_kind_from_string(std::string_view s);
// Human-readable row label ("Field Removal").
std::string_view display_name(MutationKind k);

struct MutationSpec {
    MutationKind kind = MutationKind::EmptyResponse;
    std::vector<std::string> targets;  // canonical FieldPath strings
    std::uint32_t escalation_level = 0;
    std::uint32_t added_count = 1;
    std::optional<int> status_override;
    std::uint64_t seed = 0;

    bool operator==(const MutationSpec&) const = default;
};

// Canonical textual encoding. from_json rejects unknown fields.
void to_json(nlohmann::json& j, const MutationSpec& s);
void from_json(const nlohmann::json& j, MutationSpec& s);

enum class SemanticValidity { Preserved, IntentionallyBroken, Emptied };
std::string_view to_string(SemanticValidity v);

struct HeaderAdjustment {
    std::string name;
    std::optional<std::string> value;  // nullopt: remove the header
};

struct MutationOutcome {
    std::string body;
    int status = 200;
    std::vector<HeaderAdjustment> headers_delta;
    std::vector<std::string> applied_targets;
    SemanticValidity validity = SemanticValidity::Preserved;
};

// Dispatches on spec.kind. Non-empty kinds keep baseline_status.
MutationOutcome apply_mutation(std::string_view baseline, Format format, const MutationSpec& spec,
                               int baseline_status = 200);

MutationOutcome malform(std::string_view baseline, Format format);
MutationOutcome empty_response(std::optional<int> status_override);
MutationOutcome remove_fields(const DocumentTree& tree, const std::vector<FieldPath>& targets,
                              std::uint32_t escalation_level);
MutationOutcome add_fields(const DocumentTree& tree, std::uint32_t count, std::uint64_t seed);
MutationOutcome change_type(const DocumentTree& tree, const std::optional<FieldPath>& target);
MutationOutcome disrupt_format(std::string_view baseline, Format format, std::uint64_t seed);

// Prefix of the member / element names injected by add_fields.
inline constexpr std::string_view kMutantPrefix = "__mutant_";

}  // namespace mutproxy
