#include "mutproxy/document.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <unordered_set>

namespace mutproxy {

std::string_view to_string(Format f) {
    return f == Format::Json ? "json" : "xml";
}

Format format_from_string(std::string_view s) {
    if (s == "json") return Format::Json;
    if (s == "xml") return Format::Xml;
    throw Error("unknown document format: " + std::string(s));
}

namespace {

Node make(NodeKind kind, std::string name = {}, std::string text = {}) {
    Node n;
    n.kind = kind;
    n.name = std::move(name);
    n.text = std::move(text);
    return n;
}

}  // namespace

Node Node::object() { return make(NodeKind::Object); }
Node Node::array() { return make(NodeKind::Array); }
Node Node::string(std::string value) { return make(NodeKind::String, {}, std::move(value)); }
Node Node::number(std::string lexeme) { return make(NodeKind::Number, {}, std::move(lexeme)); }
Node Node::boolean_value(bool value) {
    Node n = make(NodeKind::Boolean);
    n.boolean = value;
    return n;
}
Node Node::null() { return make(NodeKind::Null); }
Node Node::element(std::string name) { return make(NodeKind::Element, std::move(name)); }
Node Node::text_node(std::string content) { return make(NodeKind::Text, {}, std::move(content)); }
Node Node::attribute(std::string name, std::string value) {
    return make(NodeKind::Attribute, std::move(name), std::move(value));
}

double Node::number_value() const {
    return std::strtod(text.c_str(), nullptr);
}

const Node* Node::member(std::string_view key) const {
    for (const auto& m : members)
        if (m.key == key) return &m.value;
    return nullptr;
}

Node* Node::member(std::string_view key) {
    for (auto& m : members)
        if (m.key == key) return &m.value;
    return nullptr;
}

const Node* Node::attribute_named(std::string_view attr) const {
    for (const auto& a : attributes)
        if (a.name == attr) return &a;
    return nullptr;
}

namespace {

bool is_ws(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r';
}

bool all_ws(std::string_view s) {
    return std::all_of(s.begin(), s.end(), is_ws);
}

}  // namespace

std::string Node::text_content() const {
    std::string out;
    for (const auto& c : children)
        if (c.kind == NodeKind::Text) out += c.text;
    return out;
}

bool Node::element_only_content() const {
    return std::all_of(children.begin(), children.end(), [](const Node& c) {
        return c.kind != NodeKind::Text || all_ws(c.text);
    });
}

// ---------------------------------------------------------------------------
// Lexical helpers

bool is_json_number_lexeme(std::string_view s) {
    std::size_t i = 0;
    auto digit = [&](std::size_t k) { return k < s.size() && s[k] >= '0' && s[k] <= '9'; };
    if (i < s.size() && s[i] == '-') ++i;
    if (!digit(i)) return false;
    if (s[i] == '0') {
        ++i;
    } else {
        while (digit(i)) ++i;
    }
    if (i < s.size() && s[i] == '.') {
        ++i;
        if (!digit(i)) return false;
        while (digit(i)) ++i;
    }
    if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
        ++i;
        if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
        if (!digit(i)) return false;
        while (digit(i)) ++i;
    }
    return i == s.size();
}

bool is_json_integer_lexeme(std::string_view s) {
    return is_json_number_lexeme(s) && s.find_first_of(".eE") == std::string_view::npos;
}

bool is_xml_numeric(std::string_view s) {
    std::size_t i = 0;
    auto digit = [&](std::size_t k) { return k < s.size() && s[k] >= '0' && s[k] <= '9'; };
    if (i < s.size() && (s[i] == '-' || s[i] == '+')) ++i;
    bool any = false;
    while (digit(i)) { ++i; any = true; }
    if (i < s.size() && s[i] == '.') {
        ++i;
        while (digit(i)) { ++i; any = true; }
    }
    if (!any) return false;
    if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
        ++i;
        if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
        if (!digit(i)) return false;
        while (digit(i)) ++i;
    }
    return i == s.size();
}

std::string json_quote(std::string_view s) {
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(s.size() + 2);
    out += '"';
    for (unsigned char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\b': out += "\\b"; break;
            case '\f': out += "\\f"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (c < 0x20) {
                    out += "\\u00";
                    out += hex[c >> 4];
                    out += hex[c & 0xF];
                } else {
                    out += static_cast<char>(c);
                }
        }
    }
    out += '"';
    return out;
}

std::string xml_escape_text(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string xml_escape_attribute(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '"': out += "&quot;"; break;
            case '\n': out += "&#10;"; break;
            case '\t': out += "&#9;"; break;
            case '\r': out += "&#13;"; break;
            default: out += c;
        }
    }
    return out;
}

namespace {

void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

constexpr int kMaxDepth = 512;

// ---------------------------------------------------------------------------
// JSON

class JsonParser {
public:
    explicit JsonParser(std::string_view src) : src_(src) {}

    Node parse_document() {
        if (src_.size() >= 3 && src_.substr(0, 3) == "\xEF\xBB\xBF") pos_ = 3;
        skip_ws();
        if (pos_ >= src_.size()) fail("empty document");
        Node root = parse_value(0);
        skip_ws();
        if (pos_ != src_.size()) fail("trailing content after document");
        return root;
    }

private:
    [[noreturn]] void fail(const std::string& why) const { throw MalformedDocument(pos_, why); }

    void skip_ws() {
        while (pos_ < src_.size() && is_ws(src_[pos_])) ++pos_;
    }

    char peek() const { return pos_ < src_.size() ? src_[pos_] : '\0'; }

    void expect(char c) {
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    Node parse_value(int depth) {
        if (depth > kMaxDepth) fail("nesting too deep");
        skip_ws();
        if (pos_ >= src_.size()) fail("unexpected end of input");
        const std::size_t begin = pos_;
        Node n;
        switch (src_[pos_]) {
            case '{': n = parse_object(depth); break;
            case '[': n = parse_array(depth); break;
            case '"': n = Node::string(parse_string()); break;
            case 't': literal("true"); n = Node::boolean_value(true); break;
            case 'f': literal("false"); n = Node::boolean_value(false); break;
            case 'n': literal("null"); n = Node::null(); break;
            default: n = parse_number(); break;
        }
        n.span.begin = begin;
        n.span.end = pos_;
        return n;
    }

    void literal(std::string_view word) {
        if (src_.substr(pos_, word.size()) != word) fail("invalid literal");
        pos_ += word.size();
    }

    Node parse_number() {
        const std::size_t begin = pos_;
        while (pos_ < src_.size()) {
            char c = src_[pos_];
            if ((c >= '0' && c <= '9') || c == '-' || c == '+' || c == '.' || c == 'e' || c == 'E')
                ++pos_;
            else
                break;
        }
        auto lex = src_.substr(begin, pos_ - begin);
        if (lex.empty()) fail("unexpected character");
        if (!is_json_number_lexeme(lex)) {
            pos_ = begin;
            fail("invalid number");
        }
        return Node::number(std::string(lex));
    }

    std::uint32_t hex4() {
        if (pos_ + 4 > src_.size()) fail("truncated \\u escape");
        std::uint32_t v = 0;
        auto [p, ec] = std::from_chars(src_.data() + pos_, src_.data() + pos_ + 4, v, 16);
        if (ec != std::errc() || p != src_.data() + pos_ + 4) fail("invalid \\u escape");
        pos_ += 4;
        return v;
    }

    std::string parse_string() {
        expect('"');
        std::string out;
        while (true) {
            if (pos_ >= src_.size()) fail("unterminated string");
            unsigned char c = static_cast<unsigned char>(src_[pos_]);
            if (c == '"') {
                ++pos_;
                return out;
            }
            if (c < 0x20) fail("control character in string");
            if (c != '\\') {
                out += static_cast<char>(c);
                ++pos_;
                continue;
            }
            ++pos_;
            if (pos_ >= src_.size()) fail("unterminated escape");
            char e = src_[pos_++];
            switch (e) {
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                case '/': out += '/'; break;
                case 'b': out += '\b'; break;
                case 'f': out += '\f'; break;
                case 'n': out += '\n'; break;
                case 'r': out += '\r'; break;
                case 't': out += '\t'; break;
                case 'u': {
                    std::uint32_t cp = hex4();
                    if (cp >= 0xD800 && cp <= 0xDBFF) {
                        if (src_.substr(pos_, 2) != "\\u") fail("unpaired surrogate");
                        pos_ += 2;
                        std::uint32_t lo = hex4();
                        if (lo < 0xDC00 || lo > 0xDFFF) fail("invalid low surrogate");
                        cp = 0x10000 + ((cp - 0xD800) << 10) + (lo - 0xDC00);
                    } else if (cp >= 0xDC00 && cp <= 0xDFFF) {
                        fail("unpaired surrogate");
                    }
                    append_utf8(out, cp);
                    break;
                }
                default: --pos_; fail("invalid escape");
            }
        }
    }

    Node parse_object(int depth) {
        expect('{');
        Node obj = Node::object();
        std::unordered_set<std::string> seen;
        skip_ws();
        if (peek() == '}') {
            ++pos_;
            return obj;
        }
        while (true) {
            skip_ws();
            if (peek() != '"') fail("expected object key");
            const std::size_t key_pos = pos_;
            std::string key = parse_string();
            if (!seen.insert(key).second) {
                pos_ = key_pos;
                fail("duplicate key \"" + key + "\"");
            }
            skip_ws();
            expect(':');
            Node value = parse_value(depth + 1);
            obj.members.push_back(Member{std::move(key), std::move(value)});
            skip_ws();
            if (peek() == ',') {
                ++pos_;
                continue;
            }
            expect('}');
            return obj;
        }
    }

    Node parse_array(int depth) {
        expect('[');
        Node arr = Node::array();
        skip_ws();
        if (peek() == ']') {
            ++pos_;
            return arr;
        }
        while (true) {
            arr.children.push_back(parse_value(depth + 1));
            skip_ws();
            if (peek() == ',') {
                ++pos_;
                continue;
            }
            expect(']');
            return arr;
        }
    }

    std::string_view src_;
    std::size_t pos_ = 0;
};

void write_json(const Node& n, std::string& out) {
    switch (n.kind) {
        case NodeKind::Object: {
            out += '{';
            bool first = true;
            for (const auto& m : n.members) {
                if (!first) out += ',';
                first = false;
                out += json_quote(m.key);
                out += ':';
                write_json(m.value, out);
            }
            out += '}';
            break;
        }
        case NodeKind::Array: {
            out += '[';
            bool first = true;
            for (const auto& c : n.children) {
                if (!first) out += ',';
                first = false;
                write_json(c, out);
            }
            out += ']';
            break;
        }
        case NodeKind::String: out += json_quote(n.text); break;
        case NodeKind::Number: out += n.text; break;
        case NodeKind::Boolean: out += n.boolean ? "true" : "false"; break;
        case NodeKind::Null: out += "null"; break;
        default: throw FormatMismatch("XML node inside a JSON tree");
    }
}

// ---------------------------------------------------------------------------
// XML

bool is_name_start(unsigned char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_' || c == ':' || c >= 0x80;
}

bool is_name_char(unsigned char c) {
    return is_name_start(c) || (c >= '0' && c <= '9') || c == '-' || c == '.';
}

class XmlParser {
public:
    explicit XmlParser(std::string_view src) : src_(src) {}

    DocumentTree parse_document() {
        DocumentTree tree;
        tree.format = Format::Xml;
        if (src_.size() >= 3 && src_.substr(0, 3) == "\xEF\xBB\xBF") pos_ = 3;
        skip_misc(true);
        if (pos_ >= src_.size()) fail("no root element");
        if (src_[pos_] != '<') fail("text before root element");
        tree.prolog = std::string(src_.substr(0, pos_));
        tree.root = parse_element(0);
        skip_misc(false);
        if (pos_ != src_.size()) fail("content after root element");
        return tree;
    }

private:
    [[noreturn]] void fail(const std::string& why) const { throw MalformedDocument(pos_, why); }

    bool starts(std::string_view s) const { return src_.substr(pos_, s.size()) == s; }

    void skip_ws() {
        while (pos_ < src_.size() && is_ws(src_[pos_])) ++pos_;
    }

    void skip_past(std::string_view terminator, const char* what) {
        auto at = src_.find(terminator, pos_);
        if (at == std::string_view::npos) fail(std::string("unterminated ") + what);
        pos_ = at + terminator.size();
    }

    // Whitespace, comments, processing instructions and (before the root) a
    // doctype declaration.
    void skip_misc(bool allow_doctype) {
        while (true) {
            skip_ws();
            if (starts("<?")) {
                skip_past("?>", "processing instruction");
            } else if (starts("<!--")) {
                pos_ += 4;
                skip_past("-->", "comment");
            } else if (allow_doctype && starts("<!DOCTYPE")) {
                int bracket = 0;
                while (pos_ < src_.size()) {
                    char c = src_[pos_++];
                    if (c == '[') ++bracket;
                    else if (c == ']') --bracket;
                    else if (c == '>' && bracket <= 0) break;
                }
                if (pos_ >= src_.size() && src_.back() != '>') fail("unterminated doctype");
            } else {
                return;
            }
        }
    }

    std::string parse_name() {
        const std::size_t begin = pos_;
        if (pos_ >= src_.size() || !is_name_start(static_cast<unsigned char>(src_[pos_])))
            fail("expected name");
        while (pos_ < src_.size() && is_name_char(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        return std::string(src_.substr(begin, pos_ - begin));
    }

    void parse_reference(std::string& out) {
        // at '&'
        auto semi = src_.find(';', pos_);
        if (semi == std::string_view::npos || semi - pos_ > 12) fail("unterminated entity reference");
        auto ent = src_.substr(pos_ + 1, semi - pos_ - 1);
        if (ent == "lt") out += '<';
        else if (ent == "gt") out += '>';
        else if (ent == "amp") out += '&';
        else if (ent == "quot") out += '"';
        else if (ent == "apos") out += '\'';
        else if (ent.size() > 1 && ent[0] == '#') {
            std::uint32_t cp = 0;
            const bool hex = ent[1] == 'x' || ent[1] == 'X';
            auto digits = ent.substr(hex ? 2 : 1);
            auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), cp, hex ? 16 : 10);
            if (digits.empty() || ec != std::errc() || p != digits.data() + digits.size() || cp == 0 ||
                cp > 0x10FFFF)
                fail("invalid character reference");
            append_utf8(out, cp);
        } else {
            fail("unknown entity &" + std::string(ent) + ";");
        }
        pos_ = semi + 1;
    }

    std::string parse_attribute_value() {
        if (pos_ >= src_.size() || (src_[pos_] != '"' && src_[pos_] != '\'')) fail("expected quoted attribute value");
        const char quote = src_[pos_++];
        std::string out;
        while (true) {
            if (pos_ >= src_.size()) fail("unterminated attribute value");
            char c = src_[pos_];
            if (c == quote) {
                ++pos_;
                return out;
            }
            if (c == '<') fail("'<' in attribute value");
            if (c == '&') {
                parse_reference(out);
                continue;
            }
            // Attribute-value normalization of literal whitespace.
            out += (c == '\t' || c == '\n' || c == '\r') ? ' ' : c;
            ++pos_;
        }
    }

    static void append_text(Node& el, std::string text) {
        if (!el.children.empty() && el.children.back().kind == NodeKind::Text) {
            el.children.back().text += text;
            return;
        }
        el.children.push_back(Node::text_node(std::move(text)));
    }

    Node parse_element(int depth) {
        if (depth > kMaxDepth) fail("nesting too deep");
        const std::size_t begin = pos_;
        ++pos_;  // '<'
        Node el = Node::element(parse_name());
        el.span.begin = begin;
        bool self_closing = false;
        while (true) {
            const std::size_t before_ws = pos_;
            skip_ws();
            if (pos_ >= src_.size()) fail("unterminated start tag");
            if (src_[pos_] == '>') {
                el.span.open_tag_end = pos_;
                ++pos_;
                break;
            }
            if (src_[pos_] == '/') {
                ++pos_;
                if (pos_ >= src_.size() || src_[pos_] != '>') fail("expected '>' after '/'");
                el.span.open_tag_end = pos_;
                ++pos_;
                self_closing = true;
                break;
            }
            if (pos_ == before_ws) fail("expected whitespace before attribute");
            const std::size_t attr_begin = pos_;
            std::string name = parse_name();
            skip_ws();
            if (pos_ >= src_.size() || src_[pos_] != '=') fail("expected '=' after attribute name");
            ++pos_;
            skip_ws();
            std::string value = parse_attribute_value();
            if (el.attribute_named(name)) {
                pos_ = attr_begin;
                fail("duplicate attribute " + name);
            }
            Node attr = Node::attribute(std::move(name), std::move(value));
            attr.span.begin = attr_begin;
            attr.span.end = pos_;
            el.attributes.push_back(std::move(attr));
        }
        if (self_closing) {
            el.span.end = pos_;
            return el;
        }
        // Content.
        std::string text;
        auto flush = [&] {
            if (!text.empty()) append_text(el, std::move(text));
            text.clear();
        };
        while (true) {
            if (pos_ >= src_.size()) fail("unterminated element <" + el.name + ">");
            char c = src_[pos_];
            if (c == '&') {
                parse_reference(text);
                continue;
            }
            if (c != '<') {
                text += c;
                ++pos_;
                continue;
            }
            if (starts("</")) {
                flush();
                el.span.close_tag_begin = pos_;
                pos_ += 2;
                std::string closing = parse_name();
                if (closing != el.name) fail("mismatched closing tag </" + closing + "> for <" + el.name + ">");
                skip_ws();
                if (pos_ >= src_.size() || src_[pos_] != '>') fail("expected '>' in closing tag");
                ++pos_;
                el.span.end = pos_;
                return el;
            }
            if (starts("<!--")) {
                pos_ += 4;
                skip_past("-->", "comment");
                continue;
            }
            if (starts("<![CDATA[")) {
                pos_ += 9;
                auto at = src_.find("]]>", pos_);
                if (at == std::string_view::npos) fail("unterminated CDATA section");
                text.append(src_.substr(pos_, at - pos_));
                pos_ = at + 3;
                continue;
            }
            if (starts("<?")) {
                skip_past("?>", "processing instruction");
                continue;
            }
            flush();
            el.children.push_back(parse_element(depth + 1));
        }
    }

    std::string_view src_;
    std::size_t pos_ = 0;
};

void write_xml(const Node& n, std::string& out) {
    switch (n.kind) {
        case NodeKind::Element: {
            out += '<';
            out += n.name;
            for (const auto& a : n.attributes) {
                out += ' ';
                out += a.name;
                out += "=\"";
                out += xml_escape_attribute(a.text);
                out += '"';
            }
            if (n.children.empty()) {
                out += "/>";
                return;
            }
            out += '>';
            for (const auto& c : n.children) write_xml(c, out);
            out += "</";
            out += n.name;
            out += '>';
            break;
        }
        case NodeKind::Text: out += xml_escape_text(n.text); break;
        default: throw FormatMismatch("JSON node inside an XML tree");
    }
}

std::vector<const Node*> significant_children(const Node& el) {
    std::vector<const Node*> out;
    for (const auto& c : el.children)
        if (c.kind != NodeKind::Text || !all_ws(c.text)) out.push_back(&c);
    return out;
}

}  // namespace

DocumentTree parse(std::string_view body, Format format) {
    if (format == Format::Json) {
        JsonParser p(body);
        DocumentTree tree;
        tree.format = Format::Json;
        tree.root = p.parse_document();
        return tree;
    }
    XmlParser p(body);
    return p.parse_document();
}

std::string serialize(const DocumentTree& tree) {
    std::string out;
    if (tree.format == Format::Json) {
        write_json(tree.root, out);
    } else {
        out = tree.prolog;
        write_xml(tree.root, out);
    }
    return out;
}

bool nodes_equal(const Node& a, const Node& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case NodeKind::Object: {
            if (a.members.size() != b.members.size()) return false;
            for (const auto& m : a.members) {
                const Node* other = b.member(m.key);
                if (!other || !nodes_equal(m.value, *other)) return false;
            }
            return true;
        }
        case NodeKind::Array:
            return std::equal(a.children.begin(), a.children.end(), b.children.begin(), b.children.end(),
                              [](const Node& x, const Node& y) { return nodes_equal(x, y); });
        case NodeKind::String:
        case NodeKind::Text: return a.text == b.text;
        case NodeKind::Number: return a.text == b.text || a.number_value() == b.number_value();
        case NodeKind::Boolean: return a.boolean == b.boolean;
        case NodeKind::Null: return true;
        case NodeKind::Attribute: return a.name == b.name && a.text == b.text;
        case NodeKind::Element: {
            if (a.name != b.name || a.attributes.size() != b.attributes.size()) return false;
            for (const auto& attr : a.attributes) {
                const Node* other = b.attribute_named(attr.name);
                if (!other || other->text != attr.text) return false;
            }
            auto ca = significant_children(a);
            auto cb = significant_children(b);
            return std::equal(ca.begin(), ca.end(), cb.begin(), cb.end(),
                              [](const Node* x, const Node* y) { return nodes_equal(*x, *y); });
        }
    }
    return false;
}

bool trees_equal(const DocumentTree& a, const DocumentTree& b) {
    if (a.format != b.format) throw FormatMismatch("cannot compare a JSON tree with an XML tree");
    return nodes_equal(a.root, b.root);
}

}  // namespace mutproxy
