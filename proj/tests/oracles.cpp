#include "oracles.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;
using mutproxy::DocumentTree;
using mutproxy::Node;
using mutproxy::NodeKind;

namespace oracle {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<Fixture> load_corpus() {
    std::vector<Fixture> out;
    for (auto [dir, fmt] : {std::pair{"json", mutproxy::Format::Json}, std::pair{"xml", mutproxy::Format::Xml}}) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(fs::path(MUTPROXY_FIXTURE_DIR) / dir)) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& p : files) out.push_back({p.stem().string(), fmt, read_file(p.string())});
    }
    return out;
}

namespace {

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '~') out += "~0";
        else if (c == '/') out += "~1";
        else if (c == '[') out += "~2";
        else if (c == '@') out += "~3";
        else out += c;
    }
    return out;
}

struct Entry {
    std::string path;
    int preorder;
    int subtree_end;
    int depth;
    bool field;
};

int walk_json(const Node& n, const std::string& path, int depth, bool field, std::vector<Entry>& out, int& counter) {
    const int me = counter++;
    const std::size_t slot = out.size();
    out.push_back({path, me, me, depth, field});
    int last = me;
    if (n.kind == NodeKind::Object) {
        for (const auto& m : n.members) last = walk_json(m.value, path + "/" + esc(m.key), depth + 1, true, out, counter);
    } else if (n.kind == NodeKind::Array) {
        for (std::size_t i = 0; i < n.children.size(); ++i)
            last = walk_json(n.children[i], path + "/" + std::to_string(i), depth + 1, false, out, counter);
    }
    out[slot].subtree_end = last;
    return last;
}

int walk_xml(const Node& el, const std::string& path, int depth, bool field, std::vector<Entry>& out, int& counter) {
    const int me = counter++;
    const std::size_t slot = out.size();
    out.push_back({path, me, me, depth, field});
    int last = me;
    for (const auto& a : el.attributes) {
        const int id = counter++;
        out.push_back({path + "@" + esc(a.name), id, id, depth + 1, true});
        last = id;
    }
    std::map<std::string, int> seen;
    for (const auto& c : el.children) {
        if (c.kind != NodeKind::Element) continue;
        int ord = ++seen[c.name];
        std::string p = path + "/" + esc(c.name) + (ord > 1 ? "[" + std::to_string(ord) + "]" : "");
        last = walk_xml(c, p, depth + 1, true, out, counter);
    }
    out[slot].subtree_end = last;
    return last;
}

}  // namespace

std::vector<std::string> removal_targets(const DocumentTree& tree) {
    std::vector<Entry> entries;
    int counter = 0;
    if (tree.format == mutproxy::Format::Json)
        walk_json(tree.root, "", 0, false, entries, counter);
    else
        walk_xml(tree.root, "/" + esc(tree.root.name), 0, false, entries, counter);
    std::vector<Entry> fields;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(fields), [](const Entry& e) { return e.field; });
    std::sort(fields.begin(), fields.end(), [](const Entry& a, const Entry& b) {
        if (a.subtree_end != b.subtree_end) return a.subtree_end < b.subtree_end;
        return a.depth > b.depth;
    });
    std::vector<std::string> out;
    for (const auto& e : fields) out.push_back(e.path);
    return out;
}

namespace {

void collect_json_leaves(const Node& n, const std::string& path, std::map<std::string, std::string>& out) {
    switch (n.kind) {
        case NodeKind::Object:
            for (const auto& m : n.members) collect_json_leaves(m.value, path + "/" + esc(m.key), out);
            break;
        case NodeKind::Array:
            for (std::size_t i = 0; i < n.children.size(); ++i)
                collect_json_leaves(n.children[i], path + "/" + std::to_string(i), out);
            break;
        case NodeKind::String: out[path] = "s:" + n.text; break;
        case NodeKind::Number: out[path] = "n:" + n.text; break;
        case NodeKind::Boolean: out[path] = n.boolean ? "true" : "false"; break;
        case NodeKind::Null: out[path] = "null"; break;
        default: break;
    }
}

void collect_xml_leaves(const Node& el, const std::string& path, std::map<std::string, std::string>& out) {
    for (const auto& a : el.attributes) out[path + "@" + esc(a.name)] = a.text;
    bool has_elements = false;
    std::string text;
    std::map<std::string, int> seen;
    for (const auto& c : el.children) {
        if (c.kind == NodeKind::Text) {
            text += c.text;
            continue;
        }
        has_elements = true;
        int ord = ++seen[c.name];
        collect_xml_leaves(c, path + "/" + esc(c.name) + (ord > 1 ? "[" + std::to_string(ord) + "]" : ""), out);
    }
    if (!has_elements) out[path] = "t:" + text;
}

bool is_mutant(const std::string& name) {
    static const std::regex re("__mutant_[0-9]+");
    return std::regex_match(name, re);
}

void strip(Node& n) {
    std::erase_if(n.members, [](const mutproxy::Member& m) { return is_mutant(m.key); });
    std::erase_if(n.children, [&](const Node& c) {
        if (c.kind == NodeKind::Element) return is_mutant(c.name);
        if (c.kind == NodeKind::Object && n.kind == NodeKind::Array)
            return !c.members.empty() && std::all_of(c.members.begin(), c.members.end(),
                                                      [](const mutproxy::Member& m) { return is_mutant(m.key); });
        return false;
    });
    for (auto& m : n.members) strip(m.value);
    for (auto& c : n.children) strip(c);
}

}  // namespace

std::map<std::string, std::string> leaves(const DocumentTree& tree) {
    std::map<std::string, std::string> out;
    if (tree.format == mutproxy::Format::Json)
        collect_json_leaves(tree.root, "", out);
    else
        collect_xml_leaves(tree.root, "/" + esc(tree.root.name), out);
    return out;
}

DocumentTree strip_mutants(DocumentTree tree) {
    strip(tree.root);
    return tree;
}

bool one_byte_deleted(const std::string& before, const std::string& after) {
    if (after.size() + 1 != before.size()) return false;
    for (std::size_t i = 0; i < before.size(); ++i) {
        std::string candidate = before;
        candidate.erase(i, 1);
        if (candidate == after) return true;
    }
    return false;
}

bool whitespace_only_insertions(const std::string& before, const std::string& after) {
    std::size_t i = 0;
    for (char c : after) {
        if (i < before.size() && before[i] == c) {
            ++i;
        } else if (c != ' ' && c != '\n' && c != '\t' && c != '\r') {
            return false;
        }
    }
    return i == before.size();
}

}  // namespace oracle
