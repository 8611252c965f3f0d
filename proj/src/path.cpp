#include "mutproxy/path.hpp"

#include <algorithm>
#include <charconv>
#include <optional>
#include <unordered_set>
#include <utility>

namespace mutproxy {

namespace {

std::string escape_name(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '~': out += "~0"; break;
            case '/': out += "~1"; break;
            case '[': out += "~2"; break;
            case '@': out += "~3"; break;
            default: out += c;
        }
    }
    return out;
}

std::string unescape_name(std::string_view s, std::string_view whole) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '~') {
            out += s[i];
            continue;
        }
        if (i + 1 >= s.size()) throw InvalidPath("dangling '~' in path " + std::string(whole));
        switch (s[++i]) {
            case '0': out += '~'; break;
            case '1': out += '/'; break;
            case '2': out += '['; break;
            case '3': out += '@'; break;
            default: throw InvalidPath("bad escape in path " + std::string(whole));
        }
    }
    return out;
}

bool canonical_index(std::string_view s, std::size_t& value) {
    if (s.empty() || (s.size() > 1 && s[0] == '0')) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    return ec == std::errc() && p == s.data() + s.size();
}

std::size_t ordinal_of(const Node& parent, const Node& child) {
    std::size_t ordinal = 0;
    for (const auto& c : parent.children) {
        if (c.kind == NodeKind::Element && c.name == child.name) ++ordinal;
        if (&c == &child) break;
    }
    return ordinal;
}

}  // namespace

FieldPath FieldPath::parse(std::string_view text, Format format) {
    std::vector<PathSegment> segs;
    if (text.empty()) return FieldPath{};
    if (text.front() != '/') throw InvalidPath("path must start with '/': " + std::string(text));

    if (format == Format::Json) {
        std::size_t pos = 1;
        while (true) {
            auto next = text.find('/', pos);
            auto raw = text.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
            std::size_t idx = 0;
            if (canonical_index(raw, idx))
                segs.push_back(PathSegment::item(idx));
            else
                segs.push_back(PathSegment::key(unescape_name(raw, text)));
            if (next == std::string_view::npos) break;
            pos = next + 1;
        }
        return FieldPath{std::move(segs)};
    }

    // XML: the attribute part can only terminate the path.
    std::string_view body = text.substr(1);
    std::optional<std::string> attr;
    if (auto at = body.find('@'); at != std::string_view::npos) {
        attr = unescape_name(body.substr(at + 1), text);
        if (attr->empty()) throw InvalidPath("empty attribute name in " + std::string(text));
        body = body.substr(0, at);
    }
    std::size_t pos = 0;
    while (true) {
        auto next = body.find('/', pos);
        auto raw = body.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
        std::size_t ordinal = 1;
        if (auto br = raw.find('['); br != std::string_view::npos) {
            if (raw.back() != ']') throw InvalidPath("unterminated ordinal in " + std::string(text));
            auto digits = raw.substr(br + 1, raw.size() - br - 2);
            if (!canonical_index(digits, ordinal) || ordinal == 0)
                throw InvalidPath("bad ordinal in " + std::string(text));
            raw = raw.substr(0, br);
        }
        if (raw.empty()) throw InvalidPath("empty element name in " + std::string(text));
        segs.push_back(PathSegment::element(unescape_name(raw, text), ordinal));
        if (next == std::string_view::npos) break;
        pos = next + 1;
    }
    if (attr) segs.push_back(PathSegment::attribute(std::move(*attr)));
    return FieldPath{std::move(segs)};
}

std::string FieldPath::str() const {
    std::string out;
    for (const auto& s : segments_) {
        switch (s.kind) {
            case PathSegment::Kind::Key: out += '/'; out += escape_name(s.name); break;
            case PathSegment::Kind::Index: out += '/'; out += std::to_string(s.index); break;
            case PathSegment::Kind::Element:
                out += '/';
                out += escape_name(s.name);
                if (s.index != 1) out += '[' + std::to_string(s.index) + ']';
                break;
            case PathSegment::Kind::Attribute: out += '@'; out += escape_name(s.name); break;
        }
    }
    return out;
}

FieldPath FieldPath::child(PathSegment seg) const {
    auto segs = segments_;
    segs.push_back(std::move(seg));
    return FieldPath{std::move(segs)};
}

FieldPath FieldPath::parent() const {
    if (segments_.empty()) return *this;
    auto segs = segments_;
    segs.pop_back();
    return FieldPath{std::move(segs)};
}

namespace {

template <typename NodeT>
NodeT* resolve_impl(NodeT& root, Format format, const FieldPath& path) {
    const auto& segs = path.segments();
    if (format == Format::Json) {
        NodeT* cur = &root;
        for (const auto& s : segs) {
            if (cur->kind == NodeKind::Object) {
                std::string key = s.kind == PathSegment::Kind::Index ? std::to_string(s.index) : s.name;
                if (s.kind != PathSegment::Kind::Key && s.kind != PathSegment::Kind::Index) return nullptr;
                cur = cur->member(key);
                if (!cur) return nullptr;
            } else if (cur->kind == NodeKind::Array) {
                if (s.kind != PathSegment::Kind::Index || s.index >= cur->children.size()) return nullptr;
                cur = &cur->children[s.index];
            } else {
                return nullptr;
            }
        }
        return cur;
    }

    if (segs.empty()) return nullptr;
    const auto& first = segs.front();
    if (first.kind != PathSegment::Kind::Element || first.name != root.name || first.index != 1) return nullptr;
    NodeT* cur = &root;
    for (std::size_t i = 1; i < segs.size(); ++i) {
        const auto& s = segs[i];
        if (cur->kind != NodeKind::Element) return nullptr;
        if (s.kind == PathSegment::Kind::Attribute) {
            if (i + 1 != segs.size()) return nullptr;
            for (auto& a : cur->attributes)
                if (a.name == s.name) return &a;
            return nullptr;
        }
        if (s.kind != PathSegment::Kind::Element) return nullptr;
        std::size_t seen = 0;
        NodeT* found = nullptr;
        for (auto& c : cur->children) {
            if (c.kind == NodeKind::Element && c.name == s.name && ++seen == s.index) {
                found = &c;
                break;
            }
        }
        if (!found) return nullptr;
        cur = found;
    }
    return cur;
}

void enumerate_json(const Node& n, const FieldPath& here, std::vector<FieldPath>& out) {
    if (n.kind == NodeKind::Object) {
        for (const auto& m : n.members) {
            auto p = here.child(PathSegment::key(m.key));
            enumerate_json(m.value, p, out);
            out.push_back(std::move(p));
        }
    } else if (n.kind == NodeKind::Array) {
        for (std::size_t i = 0; i < n.children.size(); ++i)
            enumerate_json(n.children[i], here.child(PathSegment::item(i)), out);
    }
}

void enumerate_xml(const Node& el, const FieldPath& here, std::vector<FieldPath>& out) {
    for (const auto& a : el.attributes) out.push_back(here.child(PathSegment::attribute(a.name)));
    for (const auto& c : el.children) {
        if (c.kind != NodeKind::Element) continue;
        auto p = here.child(PathSegment::element(c.name, ordinal_of(el, c)));
        enumerate_xml(c, p, out);
        out.push_back(std::move(p));
    }
}

void erase_marked(Node& n, const std::unordered_set<const Node*>& marked) {
    for (auto& m : n.members) erase_marked(m.value, marked);
    for (auto& c : n.children) erase_marked(c, marked);

    if (!n.members.empty()) {
        std::vector<Member> kept;
        kept.reserve(n.members.size());
        for (auto& m : n.members)
            if (!marked.contains(&m.value)) kept.push_back(std::move(m));
        n.members = std::move(kept);
    }
    if (!n.children.empty()) {
        std::vector<Node> kept;
        kept.reserve(n.children.size());
        for (auto& c : n.children)
            if (!marked.contains(&c)) kept.push_back(std::move(c));
        n.children = std::move(kept);
    }
    if (!n.attributes.empty()) {
        std::vector<Node> kept;
        for (auto& a : n.attributes)
            if (!marked.contains(&a)) kept.push_back(std::move(a));
        n.attributes = std::move(kept);
    }
}

}  // namespace

const Node* resolve(const DocumentTree& tree, const FieldPath& path) {
    return resolve_impl(tree.root, tree.format, path);
}

Node* resolve(DocumentTree& tree, const FieldPath& path) {
    return resolve_impl(tree.root, tree.format, path);
}

std::vector<FieldPath> enumerate_removal_targets(const DocumentTree& tree) {
    std::vector<FieldPath> out;
    if (tree.format == Format::Json) {
        enumerate_json(tree.root, FieldPath{}, out);
    } else {
        enumerate_xml(tree.root, FieldPath{{PathSegment::element(tree.root.name)}}, out);
    }
    return out;
}

void remove_paths(DocumentTree& tree, const std::vector<FieldPath>& paths) {
    std::unordered_set<const Node*> marked;
    for (const auto& p : paths) {
        const Node* n = resolve(std::as_const(tree), p);
        if (!n) throw TargetNotFound(p.str());
        if (n == &tree.root) throw TargetNotEligible(p.str());
        marked.insert(n);
    }
    erase_marked(tree.root, marked);
}

}  // namespace mutproxy
