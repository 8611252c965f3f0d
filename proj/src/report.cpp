#include "mutproxy/report.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "mutproxy/errors.hpp"

namespace mutproxy {

using nlohmann::json;

int severity(Behavior b) {
    switch (b) {
        case Behavior::NormalLoad: return 0;
        case Behavior::GracefulTimeout: return 1;
        case Behavior::ErrorMessage: return 2;
        case Behavior::SilentFailure: return 3;
        case Behavior::IndefiniteLoading: return 4;
        case Behavior::ForceClose: return 5;
    }
    return 0;
}

namespace {

std::size_t idx(MutationKind k) { return static_cast<std::size_t>(k); }
std::size_t idx(Behavior b) { return static_cast<std::size_t>(b); }
std::size_t idx(CachingKind k) { return static_cast<std::size_t>(k); }
std::size_t idx(VersioningScheme s) { return static_cast<std::size_t>(s); }

auto finding_key(const Finding& f) {
    return std::make_tuple(idx(f.mutation.kind), f.exchange_id, idx(f.behavior), std::cref(f.note));
}

}  // namespace

std::size_t FragilityReport::count(MutationKind k, Behavior b) const { return totals[idx(k)][idx(b)]; }
std::size_t FragilityReport::count(CachingKind k) const { return caching_counts[idx(k)]; }
std::size_t FragilityReport::count(VersioningScheme s) const { return versioning_counts[idx(s)]; }

FragilityReport aggregate(const std::vector<ObservationRecord>& observations,
                          const std::vector<TargetProfile>& profiles) {
    std::map<std::string, TargetReport> targets;
    auto target = [&](const std::string& name) -> TargetReport& {
        auto [it, inserted] = targets.try_emplace(name);
        if (inserted) {
            it->second.target_name = name;
            it->second.profile.target_name = name;
        }
        return it->second;
    };
    for (const auto& p : profiles) target(p.target_name).profile = p;

    std::map<std::pair<std::string, std::uint64_t>, Behavior> per_exchange;
    for (const auto& o : observations) {
        auto [it, inserted] = per_exchange.try_emplace({o.target_name, o.exchange_id}, o.behavior);
        if (!inserted && it->second != o.behavior)
            throw InconsistentRecord("target " + o.target_name + " has conflicting behaviors for exchange " +
                                     std::to_string(o.exchange_id));
        target(o.target_name).findings.push_back({o.exchange_id, o.mutation, o.behavior, o.note});
    }

    FragilityReport r;
    r.target_count = targets.size();
    for (auto& [name, t] : targets) {
        std::sort(t.findings.begin(), t.findings.end(),
                  [](const Finding& a, const Finding& b) { return finding_key(a) < finding_key(b); });
        std::array<std::optional<Behavior>, kKindCount> worst;
        for (const auto& f : t.findings) {
            auto& w = worst[idx(f.mutation.kind)];
            if (!w || severity(f.behavior) > severity(*w)) w = f.behavior;
        }
        for (std::size_t k = 0; k < kKindCount; ++k)
            if (worst[k]) ++r.totals[k][idx(*worst[k])];
        ++r.caching_counts[idx(t.profile.caching)];
        ++r.versioning_counts[idx(t.profile.versioning.scheme)];
        r.per_target.push_back(std::move(t));
    }
    return r;
}

ReportFormat report_format_from_string(std::string_view s) {
    if (s == "plain" || s == "text" || s == "plaintext") return ReportFormat::PlainText;
    if (s == "markdown" || s == "md") return ReportFormat::Markdown;
    if (s == "machine" || s == "json") return ReportFormat::Machine;
    throw InvalidSpec("unknown report format: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Machine form

void to_json(json& j, const FragilityReport& r) {
    json totals = json::array();
    for (auto k : kAllMutationKinds) {
        json counts = json::object();
        for (auto b : kAllBehaviors) counts[std::string(to_string(b))] = r.count(k, b);
        totals.push_back({{"mutation", to_string(k)}, {"counts", counts}});
    }
    json caching = json::object();
    for (auto c : kAllCachingKinds) caching[std::string(to_string(c))] = r.count(c);
    json versioning = json::object();
    for (auto v : kAllVersioningSchemes) versioning[std::string(to_string(v))] = r.count(v);
    json targets = json::array();
    for (const auto& t : r.per_target) {
        json findings = json::array();
        for (const auto& f : t.findings)
            findings.push_back({{"exchange_id", f.exchange_id},
                                {"mutation", f.mutation},
                                {"behavior", to_string(f.behavior)},
                                {"note", f.note}});
        targets.push_back({{"target_name", t.target_name}, {"profile", t.profile}, {"findings", findings}});
    }
    j = {{"type", "report"},
         {"target_count", r.target_count},
         {"totals", totals},
         {"caching_counts", caching},
         {"versioning_counts", versioning},
         {"per_target", targets}};
}

void from_json(const json& j, FragilityReport& r) {
    FragilityReport out;
    try {
        if (j.value("type", "") != "report") throw InvalidSpec("not a report record");
        out.target_count = j.at("target_count").get<std::size_t>();
        const auto& totals = j.at("totals");
        if (!totals.is_array() || totals.size() != kKindCount) throw InvalidSpec("report totals must list every kind");
        for (const auto& row : totals) {
            auto k = mutation_kind_from_string(row.at("mutation").get<std::string>());
            for (auto b : kAllBehaviors)
                out.totals[idx(k)][idx(b)] = row.at("counts").at(std::string(to_string(b))).get<std::size_t>();
        }
        for (auto c : kAllCachingKinds)
            out.caching_counts[idx(c)] = j.at("caching_counts").at(std::string(to_string(c))).get<std::size_t>();
        for (auto v : kAllVersioningSchemes)
            out.versioning_counts[idx(v)] = j.at("versioning_counts").at(std::string(to_string(v))).get<std::size_t>();
        for (const auto& t : j.at("per_target")) {
            TargetReport tr;
            tr.target_name = t.at("target_name").get<std::string>();
            tr.profile = t.at("profile").get<TargetProfile>();
            for (const auto& f : t.at("findings"))
                tr.findings.push_back({f.at("exchange_id").get<std::uint64_t>(), f.at("mutation").get<MutationSpec>(),
                                       behavior_from_string(f.at("behavior").get<std::string>()),
                                       f.at("note").get<std::string>()});
            out.per_target.push_back(std::move(tr));
        }
    } catch (const InvalidSpec&) {
        throw;
    } catch (const std::exception& e) {
        throw InvalidSpec(std::string("bad report: ") + e.what());
    }
    r = std::move(out);
}

FragilityReport parse_machine_report(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InvalidSpec(std::string("bad report: ") + e.what());
    }
    return j.get<FragilityReport>();
}

// ---------------------------------------------------------------------------
// Text forms

namespace {

using Row = std::vector<std::string>;

std::string cell(std::string s, bool markdown) {
    std::string out;
    for (char c : s) {
        if (c == '\n' || c == '\r') out += ' ';
        else if (c == '|' && markdown) out += "\\|";
        else out += c;
    }
    return out;
}

void table(std::ostream& out, const Row& head, const std::vector<Row>& rows, bool markdown) {
    if (markdown) {
        auto line = [&](const Row& r) {
            out << '|';
            for (const auto& c : r) out << ' ' << cell(c, true) << " |";
            out << '\n';
        };
        line(head);
        out << '|';
        for (std::size_t i = 0; i < head.size(); ++i) out << (i == 0 ? "---|" : "---:|");
        out << '\n';
        for (const auto& r : rows) line(r);
        return;
    }
    std::vector<std::size_t> width(head.size(), 0);
    auto measure = [&](const Row& r) {
        for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], cell(r[i], false).size());
    };
    measure(head);
    for (const auto& r : rows) measure(r);
    auto line = [&](const Row& r) {
        std::string s;
        for (std::size_t i = 0; i < r.size(); ++i) {
            auto c = cell(r[i], false);
            if (i == 0) s += c + std::string(width[i] - c.size(), ' ');
            else s += "  " + std::string(width[i] - c.size(), ' ') + c;
        }
        while (!s.empty() && s.back() == ' ') s.pop_back();
        out << s << '\n';
    };
    line(head);
    std::size_t total = 0;
    for (auto w : width) total += w;
    out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    for (const auto& r : rows) line(r);
}

void heading(std::ostream& out, const std::string& title, int level, bool markdown) {
    if (markdown) {
        out << std::string(static_cast<std::size_t>(level), '#') << ' ' << title << "\n\n";
    } else {
        out << title << '\n' << std::string(title.size(), level == 1 ? '=' : '-') << "\n\n";
    }
}

std::string n(std::size_t v) { return std::to_string(v); }

std::string versioning_text(const VersioningInfo& v) {
    std::string s(to_string(v.scheme));
    if (!v.token.empty()) s += " (" + v.token + ")";
    return s;
}

std::string spec_text(const MutationSpec& s) {
    std::string out(display_name(s.kind));
    if (!s.targets.empty()) {
        out += " [";
        for (std::size_t i = 0; i < s.targets.size(); ++i) out += (i ? ", " : "") + s.targets[i];
        out += "]";
    }
    if (s.escalation_level > 0) out += " level " + std::to_string(s.escalation_level);
    return out;
}

}  // namespace

std::string render_report(const FragilityReport& r, ReportFormat format) {
    if (format == ReportFormat::Machine) return json(r).dump() + "\n";
    const bool md = format == ReportFormat::Markdown;
    std::ostringstream out;
    heading(out, "Fragility report", 1, md);
    out << "Targets: " << r.target_count << "\n\n";

    heading(out, "Force close", 2, md);
    std::vector<Row> rows;
    for (auto k : kAllMutationKinds) rows.push_back({std::string(display_name(k)), n(r.count(k, Behavior::ForceClose))});
    table(out, {"Mutation", "Force Close"}, rows, md);
    out << '\n';

    heading(out, "Error message versus silent failure", 2, md);
    rows.clear();
    for (auto k : kAllMutationKinds)
        rows.push_back({std::string(display_name(k)), n(r.count(k, Behavior::ErrorMessage)),
                        n(r.count(k, Behavior::SilentFailure))});
    table(out, {"Mutation", "Error Message", "Silent Failure"}, rows, md);
    out << '\n';

    heading(out, "Timeout versus indefinite loading", 2, md);
    rows.clear();
    for (auto k : kAllMutationKinds)
        rows.push_back({std::string(display_name(k)), n(r.count(k, Behavior::GracefulTimeout)),
                        n(r.count(k, Behavior::IndefiniteLoading))});
    table(out, {"Mutation", "Graceful Timeout", "Indefinite Loading"}, rows, md);
    out << '\n';

    heading(out, "All behaviors", 2, md);
    Row head = {"Mutation"};
    for (auto b : kAllBehaviors) head.emplace_back(display_name(b));
    rows.clear();
    for (auto k : kAllMutationKinds) {
        Row row = {std::string(display_name(k))};
        for (auto b : kAllBehaviors) row.push_back(n(r.count(k, b)));
        rows.push_back(std::move(row));
    }
    table(out, head, rows, md);
    out << '\n';

    heading(out, "Caching", 2, md);
    rows.clear();
    for (auto c : kAllCachingKinds) rows.push_back({std::string(to_string(c)), n(r.count(c))});
    table(out, {"Caching", "Targets"}, rows, md);
    out << '\n';

    heading(out, "Versioning", 2, md);
    rows.clear();
    for (auto v : kAllVersioningSchemes) rows.push_back({std::string(to_string(v)), n(r.count(v))});
    table(out, {"Versioning", "Targets"}, rows, md);

    for (const auto& t : r.per_target) {
        out << '\n';
        heading(out, t.target_name, 2, md);
        out << "Caching: " << to_string(t.profile.caching) << "\n";
        out << "Versioning: " << versioning_text(t.profile.versioning) << "\n";
        if (!t.profile.notes.empty()) out << "Notes: " << cell(t.profile.notes, false) << "\n";
        out << '\n';
        if (t.findings.empty()) {
            out << "No observations.\n";
            continue;
        }
        rows.clear();
        for (const auto& f : t.findings)
            rows.push_back({spec_text(f.mutation), n(f.exchange_id), std::string(display_name(f.behavior)), f.note});
        table(out, {"Mutation", "Exchange", "Behavior", "Note"}, rows, md);
    }
    return out.str();
}

}  // namespace mutproxy
