#pragma once

// Addressing of fields inside a DocumentTree.
//
// Canonical text form:
//   JSON  /key/0/name          keys and zero-based array indices
//   XML   /root/child[2]@attr  element names with one-based ordinals among
//                              same-named siblings ("[1]" is implied and not
//                              rendered), '@' for an attribute
// '~', '/', '[' and '@' inside names are written as ~0, ~1, ~2, ~3.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "mutproxy/document.hpp"

namespace mutproxy {

struct PathSegment {
    enum class Kind { Key, Index, Element, Attribute };

    Kind kind = Kind::Key;
    std::string name;       // Key, Element, Attribute
    std::size_t index = 0;  // Index: zero-based; Element: one-based ordinal

    static PathSegment key(std::string k) { return {Kind::Key, std::move(k), 0}; }
    static PathSegment item(std::size_t i) { return {Kind::Index, {}, i}; }
    static PathSegment element(std::string n, std::size_t ordinal = 1) {
        return {Kind::Element, std::move(n), ordinal};
    }
    static PathSegment attribute(std::string n) { return {Kind::Attribute, std::move(n), 0}; }

    bool operator==(const PathSegment&) const = default;
};

class FieldPath {
public:
    FieldPath() = default;
    explicit FieldPath(std::vector<PathSegment> segments) : segments_(std::move(segments)) {}

    // Throws InvalidPath.
    static FieldPath parse(std::string_view text, Format format);

    std::string str() const;
    const std::vector<PathSegment>& segments() const noexcept { return segments_; }
    bool empty() const noexcept { return segments_.empty(); }

    FieldPath child(PathSegment seg) const;
    FieldPath parent() const;

    // Equal when the canonical renderings are equal ("0" as key vs index of a
    // JSON path renders the same and addresses the same node).
    friend bool operator==(const FieldPath& a, const FieldPath& b) { return a.str() == b.str(); }

private:
    std::vector<PathSegment> segments_;
};

// The unique node addressed by path, or nullptr.
const Node* resolve(const DocumentTree& tree, const FieldPath& path);
Node* resolve(DocumentTree& tree, const FieldPath& path);

// Every removable field (object members; XML attributes and child elements)
// in document order with descendants listed before their ancestor.
std::vector<FieldPath> enumerate_removal_targets(const DocumentTree& tree);

// Removes all addressed fields. Every path is resolved against the tree as
// given before anything is removed, so ordinals and indices refer to the
// original document. Throws TargetNotFound / TargetNotEligible (root).
void remove_paths(DocumentTree& tree, const std::vector<FieldPath>& paths);

}  // namespace mutproxy
