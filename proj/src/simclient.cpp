#include "mutproxy/simclient.hpp"

#include <istream>
#include <ostream>
#include <thread>

#include "mutproxy/errors.hpp"
#include "mutproxy/http.hpp"
#include "mutproxy/proxy.hpp"

namespace mutproxy {

std::string_view to_string(Reaction r) {
    switch (r) {
        case Reaction::NormalLoad: return "normal_load";
        case Reaction::Crash: return "crash";
        case Reaction::ErrorMessage: return "error_message";
        case Reaction::SilentFailure: return "silent_failure";
        case Reaction::Hang: return "hang";
        case Reaction::Timeout: return "timeout";
    }
    return "normal_load";
}

Reaction reaction_from_string(std::string_view s) {
    for (auto r : kAllReactions)
        if (to_string(r) == s) return r;
    throw InvalidSpec("unknown reaction: " + std::string(s));
}

Behavior behavior_for(Reaction r) {
    switch (r) {
        case Reaction::NormalLoad: return Behavior::NormalLoad;
        case Reaction::Crash: return Behavior::ForceClose;
        case Reaction::ErrorMessage: return Behavior::ErrorMessage;
        case Reaction::SilentFailure: return Behavior::SilentFailure;
        case Reaction::Hang: return Behavior::IndefiniteLoading;
        case Reaction::Timeout: return Behavior::GracefulTimeout;
    }
    return Behavior::NormalLoad;
}

Reaction FragilityMatrix::react(std::optional<MutationKind> detected) const {
    if (!detected) return Reaction::NormalLoad;
    auto it = reactions.find(*detected);
    return it == reactions.end() ? Reaction::NormalLoad : it->second;
}

void to_json(nlohmann::json& j, const FragilityMatrix& m) {
    j = nlohmann::json::object();
    for (const auto& [k, r] : m.reactions) j[std::string(to_string(k))] = to_string(r);
}

void from_json(const nlohmann::json& j, FragilityMatrix& m) {
    if (!j.is_object()) throw InvalidSpec("fragility matrix must be an object");
    FragilityMatrix out;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_string()) throw InvalidSpec("reaction for " + key + " must be a string");
        out.reactions[mutation_kind_from_string(key)] = reaction_from_string(value.get<std::string>());
    }
    for (auto k : kAllMutationKinds)
        if (!out.reactions.contains(k)) throw InvalidSpec("fragility matrix has no reaction for " + std::string(to_string(k)));
    m = std::move(out);
}

// ---------------------------------------------------------------------------
// Detection

namespace {

// path -> shape of the node found there.
using Signature = std::map<std::string, std::string>;

std::string escape(const std::string& name) {
    std::string out;
    for (char c : name) {
        if (c == '/') out += "~1";
        else if (c == '~') out += "~0";
        else out += c;
    }
    return out;
}

void sign_json(const Node& n, const std::string& path, Signature& sig) {
    switch (n.kind) {
        case NodeKind::Object:
            sig[path] = "object";
            for (const auto& m : n.members) sign_json(m.value, path + "/" + escape(m.key), sig);
            break;
        case NodeKind::Array:
            sig[path] = "array";
            for (std::size_t i = 0; i < n.children.size(); ++i)
                sign_json(n.children[i], path + "/" + std::to_string(i), sig);
            break;
        case NodeKind::String: sig[path] = "string"; break;
        case NodeKind::Number: sig[path] = "number"; break;
        case NodeKind::Boolean: sig[path] = "boolean"; break;
        default: sig[path] = "null"; break;
    }
}

void sign_xml(const Node& n, const std::string& path, Signature& sig) {
    if (n.element_only_content()) {
        sig[path] = "element";
    } else {
        sig[path] = is_xml_numeric(n.text_content()) ? "numeric-text" : "text";
    }
    for (const auto& a : n.attributes)
        sig[path + "@" + escape(a.name)] = is_xml_numeric(a.text) ? "numeric-attribute" : "attribute";
    std::map<std::string, std::size_t> seen;
    for (const auto& c : n.children) {
        if (c.kind != NodeKind::Element) continue;
        const auto ordinal = ++seen[c.name];
        sign_xml(c, path + "/" + escape(c.name) + "[" + std::to_string(ordinal) + "]", sig);
    }
}

Signature signature(const DocumentTree& t) {
    Signature sig;
    if (t.format == Format::Json) sign_json(t.root, "", sig);
    else sign_xml(t.root, "/" + escape(t.root.name), sig);
    return sig;
}

}  // namespace

std::optional<MutationKind> detect_mutation(std::string_view expected, Format format, std::string_view actual) {
    if (actual.empty()) return expected.empty() ? std::nullopt : std::optional(MutationKind::EmptyResponse);
    DocumentTree got;
    try {
        got = parse(actual, format);
    } catch (const MalformedDocument&) {
        return MutationKind::MalformedResponse;
    }
    const auto want = parse(expected, format);
    if (trees_equal(want, got)) {
        if (expected == actual) return std::nullopt;
        return MutationKind::FormatDisruption;
    }
    const auto a = signature(want), b = signature(got);
    for (const auto& [path, _] : a)
        if (!b.contains(path)) return MutationKind::FieldRemoval;
    for (const auto& [path, _] : b)
        if (!a.contains(path)) return MutationKind::FieldAddition;
    for (const auto& [path, shape] : a)
        if (b.at(path) != shape) return MutationKind::TypeChange;
    // Same shape, different values: not one of the operators.
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Log

std::string format_log_line(const LogLine& l) {
    return std::to_string(l.tick_ms) + "," + std::to_string(l.cycle) + "," +
           (l.detected ? std::string(to_string(*l.detected)) : std::string("none")) + "," + l.reaction;
}

LogLine parse_log_line(std::string_view line) {
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
        auto comma = line.find(',', start);
        cols.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    if (cols.size() != 4) throw InvalidSpec("log line needs 4 fields: " + std::string(line));
    LogLine l;
    try {
        l.tick_ms = std::stoll(cols[0]);
        l.cycle = static_cast<std::uint32_t>(std::stoul(cols[1]));
    } catch (const std::exception&) {
        throw InvalidSpec("bad log line: " + std::string(line));
    }
    if (cols[2] != "none") l.detected = mutation_kind_from_string(cols[2]);
    if (cols[3] != "retry" && cols[3] != "baseline") reaction_from_string(cols[3]);
    l.reaction = cols[3];
    return l;
}

std::vector<LogLine> read_log(std::istream& in) {
    std::vector<LogLine> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(parse_log_line(line));
    return out;
}

// ---------------------------------------------------------------------------
// Client loop

namespace {

class Client {
public:
    explicit Client(const SimOptions& o) : opts_(o), start_(std::chrono::steady_clock::now()) {
        auto u = http::Url::parse(o.url);
        if (!u) throw InvalidSpec("simclient needs an absolute http URL: " + o.url);
        url_ = *u;
    }

    std::string fetch() {
        http::Request req;
        req.method = "GET";
        req.headers.add("Host", url_.authority());
        req.headers.add("Connection", "close");
        req.headers.add("User-Agent", "mutproxy-simclient");
        std::string host = url_.host;
        std::uint16_t port = url_.port;
        if (opts_.proxy) {
            std::tie(host, port) = http::split_host_port(*opts_.proxy, 8080);
            req.target = url_.str();
        } else {
            req.target = url_.origin_form();
        }
        try {
            return decoded_body(http::round_trip(host, port, req, opts_.request_timeout));
        } catch (const http::ConnectError& e) {
            throw ProxyUnreachable(e.what());
        }
    }

    std::int64_t tick() const {
        return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    const SimOptions& opts_;
    http::Url url_;
    std::chrono::steady_clock::time_point start_;
};

void echo_fields(const DocumentTree& t, std::ostream& echo, std::uint32_t cycle) {
    std::size_t count = signature(t).size();
    echo << "cycle " << cycle << ": rendered " << count << " fields\n";
}

}  // namespace

int run_simclient(const SimOptions& opts, std::ostream& log, std::ostream& echo) {
    Client client(opts);
    auto emit = [&](std::uint32_t cycle, std::optional<MutationKind> detected, std::string_view reaction) {
        log << format_log_line({client.tick(), cycle, detected, std::string(reaction)}) << std::endl;
    };

    std::string expected;
    if (opts.expected) {
        expected = *opts.expected;
    } else {
        expected = client.fetch();
        emit(0, std::nullopt, "baseline");
    }
    Format format = Format::Json;
    if (opts.format) format = *opts.format;
    else if (detect_body_format({}, expected) == BodyFormat::Xml) format = Format::Xml;

    for (std::uint32_t cycle = 1; cycle <= opts.cycles; ++cycle) {
        if (cycle > 1) std::this_thread::sleep_for(opts.interval);
        auto body = client.fetch();
        auto detected = detect_mutation(expected, format, body);
        auto reaction = opts.matrix.react(detected);
        switch (reaction) {
            case Reaction::Crash:
                emit(cycle, detected, to_string(reaction));
                return kCrashExitCode;
            case Reaction::Hang:
                emit(cycle, detected, to_string(reaction));
                while (true) std::this_thread::sleep_for(std::chrono::hours(1));
            case Reaction::Timeout:
                for (std::uint32_t r = 0; r < opts.timeout_retries; ++r) {
                    emit(cycle, detected, "retry");
                    std::this_thread::sleep_for(opts.interval);
                    client.fetch();
                }
                emit(cycle, detected, to_string(reaction));
                break;
            case Reaction::NormalLoad:
                if (!body.empty()) {
                    try {
                        echo_fields(parse(body, format), echo, cycle);
                    } catch (const MalformedDocument&) {
                    }
                }
                emit(cycle, detected, to_string(reaction));
                break;
            default:
                emit(cycle, detected, to_string(reaction));
                break;
        }
    }
    return 0;
}

}  // namespace mutproxy
