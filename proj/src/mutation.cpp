#include "mutproxy/mutation.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <random>
#include <set>

namespace mutproxy {

namespace {

struct KindName {
    MutationKind kind;
    std::string_view id;
    std::string_view display;
};

constexpr KindName kKindNames[] = {
    {MutationKind::FieldAddition, "field_addition", "Field Addition"},
    {MutationKind::FieldRemoval, "field_removal", "Field Removal"},
    {MutationKind::MalformedResponse, "malformed_response", "Malformed Response"},
    {MutationKind::EmptyResponse, "empty_response", "Empty Response"},
    {MutationKind::TypeChange, "type_change", "Changing Data Type"},
    {MutationKind::FormatDisruption, "format_disruption", "Data Formatting"},
};

}  // namespace

std::string_view to_string(MutationKind k) {
    for (const auto& n : kKindNames)
        if (n.kind == k) return n.id;
    return "unknown";
}

std::string_view display_name(MutationKind k) {
    for (const auto& n : kKindNames)
        if (n.kind == k) return n.display;
    return "Unknown";
}

MutationKind mutation_kind_from_string(std::string_view s) {
    for (const auto& n : kKindNames)
        if (n.id == s) return n.kind;
    throw InvalidSpec("unknown mutation kind: " + std::string(s));
}

std::string_view to_string(SemanticValidity v) {
    switch (v) {
        case SemanticValidity::Preserved: return "preserved";
        case SemanticValidity::IntentionallyBroken: return "intentionally_broken";
        case SemanticValidity::Emptied: return "emptied";
    }
    return "unknown";
}

void to_json(nlohmann::json& j, const MutationSpec& s) {
    j = nlohmann::json{
        {"kind", to_string(s.kind)},
        {"targets", s.targets},
        {"escalation_level", s.escalation_level},
        {"added_count", s.added_count},
        {"status_override", s.status_override ? nlohmann::json(*s.status_override) : nlohmann::json(nullptr)},
        {"seed", s.seed},
    };
}

void from_json(const nlohmann::json& j, MutationSpec& s) {
    if (!j.is_object()) throw InvalidSpec("mutation spec must be an object");
    static const std::set<std::string> known{"kind", "targets", "escalation_level", "added_count",
                                             "status_override", "seed"};
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) throw InvalidSpec("unknown mutation spec field: " + key);
    if (!j.contains("kind") || !j["kind"].is_string()) throw InvalidSpec("mutation spec requires a string 'kind'");
    MutationSpec out;
    out.kind = mutation_kind_from_string(j["kind"].get<std::string>());
    try {
        if (j.contains("targets")) out.targets = j["targets"].get<std::vector<std::string>>();
        if (j.contains("escalation_level")) out.escalation_level = j["escalation_level"].get<std::uint32_t>();
        if (j.contains("added_count")) out.added_count = j["added_count"].get<std::uint32_t>();
        if (j.contains("status_override") && !j["status_override"].is_null())
            out.status_override = j["status_override"].get<int>();
        if (j.contains("seed")) out.seed = j["seed"].get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidSpec(std::string("bad mutation spec field: ") + e.what());
    }
    s = std::move(out);
}

namespace {

std::string content_length(std::size_t n) { return std::to_string(n); }

MutationOutcome preserved(std::string body, std::vector<std::string> targets) {
    MutationOutcome out;
    out.headers_delta.push_back({"Content-Length", content_length(body.size())});
    out.body = std::move(body);
    out.applied_targets = std::move(targets);
    out.validity = SemanticValidity::Preserved;
    return out;
}

// Pre-order search for the first JSON string value (object keys excluded).
const Node* first_string_value(const Node& n) {
    if (n.kind == NodeKind::String) return &n;
    for (const auto& m : n.members)
        if (const Node* s = first_string_value(m.value)) return s;
    for (const auto& c : n.children)
        if (const Node* s = first_string_value(c)) return s;
    return nullptr;
}

std::string irrelevant_value(std::mt19937_64& rng) {
    static constexpr char alphabet[] = "abcdefghijklmnopqrstuvwxyz";
    std::string out = "irrelevant-";
    for (int i = 0; i < 12; ++i) out += alphabet[rng() % 26];
    return out;
}

std::string mutant_name(std::size_t k) { return std::string(kMutantPrefix) + std::to_string(k); }

// Breadth-first, document order within a level.
std::optional<FieldPath> root_most(const DocumentTree& tree, NodeKind wanted) {
    std::deque<std::pair<const Node*, FieldPath>> queue{{&tree.root, FieldPath{}}};
    while (!queue.empty()) {
        auto [n, path] = std::move(queue.front());
        queue.pop_front();
        if (n->kind == wanted) return path;
        for (const auto& m : n->members) queue.emplace_back(&m.value, path.child(PathSegment::key(m.key)));
        for (std::size_t i = 0; i < n->children.size(); ++i)
            queue.emplace_back(&n->children[i], path.child(PathSegment::item(i)));
    }
    return std::nullopt;
}


bool json_type_eligible(const Node& n) {
    return n.kind == NodeKind::Number || (n.kind == NodeKind::String && is_json_integer_lexeme(n.text));
}

bool xml_element_numeric(const Node& el) {
    return el.kind == NodeKind::Element && !el.children.empty() &&
           std::all_of(el.children.begin(), el.children.end(),
                       [](const Node& c) { return c.kind == NodeKind::Text; }) &&
           is_xml_numeric(el.text_content());
}

std::optional<FieldPath> first_json_type_site(const Node& n, const FieldPath& here) {
    if (json_type_eligible(n)) return here;
    for (const auto& m : n.members)
        if (auto p = first_json_type_site(m.value, here.child(PathSegment::key(m.key)))) return p;
    for (std::size_t i = 0; i < n.children.size(); ++i)
        if (auto p = first_json_type_site(n.children[i], here.child(PathSegment::item(i)))) return p;
    return std::nullopt;
}

std::optional<FieldPath> first_xml_type_site(const Node& el, const FieldPath& here) {
    for (const auto& a : el.attributes)
        if (is_xml_numeric(a.text)) return here.child(PathSegment::attribute(a.name));
    if (xml_element_numeric(el)) return here;
    std::map<std::string, std::size_t> ordinals;
    for (const auto& c : el.children) {
        if (c.kind != NodeKind::Element) continue;
        auto p = here.child(PathSegment::element(c.name, ++ordinals[c.name]));
        if (auto found = first_xml_type_site(c, p)) return found;
    }
    return std::nullopt;
}

}  // namespace

MutationOutcome malform(std::string_view baseline, Format format) {
    DocumentTree tree = parse(baseline, format);
    std::size_t cut = npos;
    if (format == Format::Json) {
        const Node* s = first_string_value(tree.root);
        if (!s) throw NothingToMutate("document contains no string value to leave dangling");
        cut = s->span.end - 1;  // closing quote
    } else {
        cut = tree.root.span.open_tag_end;
    }
    std::string body(baseline);
    body.erase(cut, 1);
    try {
        (void)parse(body, format);
    } catch (const MalformedDocument&) {
        MutationOutcome out;
        out.headers_delta.push_back({"Content-Length", content_length(body.size())});
        out.body = std::move(body);
        out.validity = SemanticValidity::IntentionallyBroken;
        return out;
    }
    throw NothingToMutate("deleting the malformation byte still leaves a well-formed document");
}

MutationOutcome empty_response(std::optional<int> status_override) {
    const int status = status_override.value_or(200);
    if (status < 100 || status > 599) throw InvalidStatus(status);
    MutationOutcome out;
    out.status = status;
    out.headers_delta.push_back({"Content-Length", "0"});
    out.validity = SemanticValidity::Emptied;
    return out;
}

MutationOutcome remove_fields(const DocumentTree& tree, const std::vector<FieldPath>& targets,
                              std::uint32_t escalation_level) {
    std::vector<FieldPath> chosen;
    if (escalation_level > 0) {
        if (!targets.empty()) throw InvalidSpec("escalation_level and explicit targets are mutually exclusive");
        auto all = enumerate_removal_targets(tree);
        if (escalation_level > all.size()) throw EscalationExhausted(escalation_level, all.size());
        chosen.assign(all.begin(), all.begin() + escalation_level);
    } else {
        if (targets.empty()) throw NothingToMutate("field removal needs targets or an escalation level");
        chosen = targets;
    }
    DocumentTree copy = tree;
    remove_paths(copy, chosen);
    std::vector<std::string> applied;
    applied.reserve(chosen.size());
    for (const auto& p : chosen) applied.push_back(p.str());
    return preserved(serialize(copy), std::move(applied));
}

MutationOutcome add_fields(const DocumentTree& tree, std::uint32_t count, std::uint64_t seed) {
    if (count == 0) throw InvalidSpec("added_count must be positive");
    std::mt19937_64 rng(seed);
    DocumentTree copy = tree;
    std::vector<std::string> applied;

    if (tree.format == Format::Json) {
        if (auto obj_path = root_most(tree, NodeKind::Object)) {
            Node* obj = resolve(copy, *obj_path);
            std::size_t k = 0;
            for (std::uint32_t i = 0; i < count; ++i, ++k) {
                while (obj->member(mutant_name(k))) ++k;
                obj->members.push_back(Member{mutant_name(k), Node::string(irrelevant_value(rng))});
                applied.push_back(obj_path->child(PathSegment::key(mutant_name(k))).str());
            }
        } else if (auto arr_path = root_most(tree, NodeKind::Array)) {
            Node* arr = resolve(copy, *arr_path);
            for (std::uint32_t i = 0; i < count; ++i) {
                Node item = Node::object();
                item.members.push_back(Member{mutant_name(i), Node::string(irrelevant_value(rng))});
                applied.push_back(arr_path->child(PathSegment::item(arr->children.size()))
                                      .child(PathSegment::key(mutant_name(i)))
                                      .str());
                arr->children.push_back(std::move(item));
            }
        } else {
            throw NothingToMutate("document has no object or array to add fields to");
        }
    } else {
        Node& root = copy.root;
        FieldPath root_path{{PathSegment::element(root.name)}};
        auto has_child = [&](const std::string& name) {
            return std::any_of(root.children.begin(), root.children.end(), [&](const Node& c) {
                return c.kind == NodeKind::Element && c.name == name;
            });
        };
        std::size_t k = 0;
        for (std::uint32_t i = 0; i < count; ++i, ++k) {
            while (has_child(mutant_name(k))) ++k;
            Node el = Node::element(mutant_name(k));
            el.children.push_back(Node::text_node(irrelevant_value(rng)));
            root.children.push_back(std::move(el));
            applied.push_back(root_path.child(PathSegment::element(mutant_name(k))).str());
        }
    }
    return preserved(serialize(copy), std::move(applied));
}

MutationOutcome change_type(const DocumentTree& tree, const std::optional<FieldPath>& target) {
    std::optional<FieldPath> site = target;
    if (!site) {
        site = tree.format == Format::Json
                   ? first_json_type_site(tree.root, FieldPath{})
                   : first_xml_type_site(tree.root, FieldPath{{PathSegment::element(tree.root.name)}});
        if (!site) throw NothingToMutate("no field with a numeric or integer-string value");
    }
    DocumentTree copy = tree;
    Node* node = resolve(copy, *site);
    if (!node) throw TargetNotFound(site->str());

    if (tree.format == Format::Json) {
        if (node->kind == NodeKind::Number) {
            *node = Node::string(node->text);
        } else if (node->kind == NodeKind::String && is_json_integer_lexeme(node->text)) {
            *node = Node::number(node->text);
        } else {
            throw TargetNotEligible(site->str());
        }
    } else if (node->kind == NodeKind::Attribute && is_xml_numeric(node->text)) {
        node->text += 'X';
    } else if (xml_element_numeric(*node)) {
        std::string text = node->text_content() + 'X';
        node->children.clear();
        node->children.push_back(Node::text_node(std::move(text)));
    } else {
        throw TargetNotEligible(site->str());
    }
    return preserved(serialize(copy), {site->str()});
}

namespace {

char whitespace_unit(std::mt19937_64& rng) {
    static constexpr char units[] = {' ', '\n', '\t'};
    return units[rng() % 3];
}

// Offsets just past each JSON token, plus 0. Input must be valid JSON.
std::vector<std::size_t> json_token_gaps(std::string_view s) {
    std::vector<std::size_t> gaps{0};
    std::size_t i = 0;
    while (i < s.size()) {
        char c = s[i];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            ++i;
            continue;
        }
        if (c == '"') {
            ++i;
            while (i < s.size() && s[i] != '"') i += (s[i] == '\\') ? 2 : 1;
            ++i;
        } else if (c == '{' || c == '}' || c == '[' || c == ']' || c == ',' || c == ':') {
            ++i;
        } else {
            while (i < s.size() && std::string_view(" \t\n\r{}[],:\"").find(s[i]) == std::string_view::npos) ++i;
        }
        gaps.push_back(i);
    }
    return gaps;
}

void xml_gaps(const Node& el, std::size_t depth, std::vector<std::pair<std::size_t, std::size_t>>& out) {
    bool has_element_child = std::any_of(el.children.begin(), el.children.end(),
                                         [](const Node& c) { return c.kind == NodeKind::Element; });
    if (has_element_child && el.element_only_content() && el.span.close_tag_begin != npos) {
        for (const auto& c : el.children)
            if (c.kind == NodeKind::Element) out.emplace_back(c.span.begin, depth + 1);
        out.emplace_back(el.span.close_tag_begin, depth);
    }
    for (const auto& c : el.children)
        if (c.kind == NodeKind::Element) xml_gaps(c, depth + 1, out);
}

}  // namespace

MutationOutcome disrupt_format(std::string_view baseline, Format format, std::uint64_t seed) {
    DocumentTree tree = parse(baseline, format);
    std::mt19937_64 rng(seed);
    std::string out;
    out.reserve(baseline.size() * 2);
    std::size_t inserted = 0;

    if (format == Format::Json) {
        std::size_t prev = 0;
        for (std::size_t gap : json_token_gaps(baseline)) {
            out.append(baseline.substr(prev, gap - prev));
            prev = gap;
            const auto units = rng() % 5;
            for (std::uint64_t u = 0; u < units; ++u) out += whitespace_unit(rng);
            inserted += units;
        }
        out.append(baseline.substr(prev));
    } else {
        std::vector<std::pair<std::size_t, std::size_t>> gaps;
        xml_gaps(tree.root, 0, gaps);
        std::sort(gaps.begin(), gaps.end());
        const std::size_t indent = 1 + rng() % 4;
        std::size_t prev = 0;
        for (auto [offset, depth] : gaps) {
            out.append(baseline.substr(prev, offset - prev));
            prev = offset;
            out += '\n';
            out.append(depth * indent, ' ');
            inserted += 1 + depth * indent;
        }
        out.append(baseline.substr(prev));
    }
    // Trailing whitespace is legal in both formats and keeps the mutation visible.
    if (inserted == 0) out += '\n';
    return preserved(std::move(out), {});
}

MutationOutcome apply_mutation(std::string_view baseline, Format format, const MutationSpec& spec,
                               int baseline_status) {
    if (spec.kind == MutationKind::EmptyResponse) return empty_response(spec.status_override);

    auto parse_targets = [&] {
        std::vector<FieldPath> paths;
        for (const auto& t : spec.targets) paths.push_back(FieldPath::parse(t, format));
        return paths;
    };

    MutationOutcome out;
    switch (spec.kind) {
        case MutationKind::MalformedResponse: out = malform(baseline, format); break;
        case MutationKind::FormatDisruption: out = disrupt_format(baseline, format, spec.seed); break;
        case MutationKind::FieldRemoval:
            out = remove_fields(parse(baseline, format), parse_targets(), spec.escalation_level);
            break;
        case MutationKind::FieldAddition: out = add_fields(parse(baseline, format), spec.added_count, spec.seed); break;
        case MutationKind::TypeChange: {
            auto targets = parse_targets();
            if (targets.size() > 1) throw InvalidSpec("type change takes at most one target");
            std::optional<FieldPath> target;
            if (!targets.empty()) target = targets.front();
            out = change_type(parse(baseline, format), target);
            break;
        }
        case MutationKind::EmptyResponse: break;
    }
    out.status = baseline_status;
    return out;
}

}  // namespace mutproxy
