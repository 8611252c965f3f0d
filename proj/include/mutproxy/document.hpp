#pragma once

// Uniform tree over JSON and XML response bodies.
//
// Both formats share one Node type so that the mutation operators can be
// written once. JSON trees only ever contain Object/Array/String/Number/
// Boolean/Null nodes; XML trees only Element/Text/Attribute nodes.

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mutproxy/errors.hpp"

namespace mutproxy {

enum class Format { Json, Xml };

std::string_view to_string(Format f);
Format format_from_string(std::string_view s);

enum class NodeKind { Object, Array, String, Number, Boolean, Null, Element, Text, Attribute };

inline constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

// Byte offsets into the text a node was parsed from. Not part of equality;
// nodes built programmatically carry npos.
struct SourceSpan {
    std::size_t begin = npos;
    std::size_t end = npos;  // exclusive
    // Element only: offset of the '>' closing the opening tag, and of the '<'
    // starting the closing tag (npos for self-closing elements).
    std::size_t open_tag_end = npos;
    std::size_t close_tag_begin = npos;
};

struct Member;

struct Node {
    NodeKind kind = NodeKind::Null;
    std::string name;   // Element / Attribute
    std::string text;   // String / Text / Attribute value (decoded); Number lexeme
    bool boolean = false;
    std::vector<Member> members;   // Object, in source order
    std::vector<Node> children;    // Array items; Element content (Element / Text)
    std::vector<Node> attributes;  // Element, in source order
    SourceSpan span;

    static Node object();
    static Node array();
    static Node string(std::string value);
    static Node number(std::string lexeme);
    static Node boolean_value(bool value);
    static Node null();
    static Node element(std::string name);
    static Node text_node(std::string content);
    static Node attribute(std::string name, std::string value);

    bool is_json() const noexcept { return kind <= NodeKind::Null; }
    double number_value() const;

    const Node* member(std::string_view key) const;
    Node* member(std::string_view key);
    const Node* attribute_named(std::string_view attr) const;

    // Concatenated text of an element's Text children.
    std::string text_content() const;
    // True when every Text child is whitespace-only.
    bool element_only_content() const;
};

struct Member {
    std::string key;
    Node value;
};

struct DocumentTree {
    Format format = Format::Json;
    Node root;
    // XML only: raw bytes preceding the root element (declaration, comments,
    // doctype), reproduced verbatim by serialize.
    std::string prolog;
};

// Throws MalformedDocument naming the first offending byte.
DocumentTree parse(std::string_view body, Format format);

// Compact rendering. Number lexemes and the XML prolog are reproduced as-is.
std::string serialize(const DocumentTree& tree);

// Structural equality: JSON object-key order and XML attribute order are
// ignored, array / child order is not, numbers compare by value, and
// whitespace-only XML text is ignored. Throws FormatMismatch.
bool trees_equal(const DocumentTree& a, const DocumentTree& b);
bool nodes_equal(const Node& a, const Node& b);

// JSON string literal grammar helpers shared by parser and operators.
bool is_json_number_lexeme(std::string_view s);
bool is_json_integer_lexeme(std::string_view s);
// Decimal number as it may appear in XML text or attribute values.
bool is_xml_numeric(std::string_view s);

std::string json_quote(std::string_view s);
std::string xml_escape_text(std::string_view s);
std::string xml_escape_attribute(std::string_view s);

}  // namespace mutproxy
