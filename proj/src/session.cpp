#include "mutproxy/session.hpp"

#include <algorithm>
#include <array>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "mutproxy/errors.hpp"

namespace mutproxy {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Enum names

std::string_view to_string(Origin o) { return o == Origin::Upstream ? "upstream" : "mutated_local"; }

namespace {

Origin origin_from_string(std::string_view s) {
    if (s == "upstream") return Origin::Upstream;
    if (s == "mutated_local") return Origin::MutatedLocal;
    throw InvalidSpec("unknown origin: " + std::string(s));
}

}  // namespace

std::string_view to_string(Behavior b) {
    switch (b) {
        case Behavior::NormalLoad: return "normal_load";
        case Behavior::ForceClose: return "force_close";
        case Behavior::ErrorMessage: return "error_message";
        case Behavior::SilentFailure: return "silent_failure";
        case Behavior::IndefiniteLoading: return "indefinite_loading";
        case Behavior::GracefulTimeout: return "graceful_timeout";
    }
    return "?";
}

std::string_view display_name(Behavior b) {
    switch (b) {
        case Behavior::NormalLoad: return "Normal Load";
        case Behavior::ForceClose: return "Force Close";
        case Behavior::ErrorMessage: return "Error Message";
        case Behavior::SilentFailure: return "Silent Failure";
        case Behavior::IndefiniteLoading: return "Indefinite Loading";
        case Behavior::GracefulTimeout: return "Graceful Timeout";
    }
    return "?";
}

Behavior behavior_from_string(std::string_view s) {
    for (auto b : kAllBehaviors)
        if (to_string(b) == s) return b;
    throw InvalidSpec("unknown behavior: " + std::string(s));
}

std::string_view to_string(CachingKind k) {
    switch (k) {
        case CachingKind::None: return "none";
        case CachingKind::TimeBased: return "time_based";
        case CachingKind::HashBased: return "hash_based";
        case CachingKind::SessionScoped: return "session_scoped";
        case CachingKind::Unknown: return "unknown";
    }
    return "?";
}

CachingKind caching_kind_from_string(std::string_view s) {
    for (auto k : kAllCachingKinds)
        if (to_string(k) == s) return k;
    throw InvalidSpec("unknown caching kind: " + std::string(s));
}

std::string_view to_string(VersioningScheme s) {
    switch (s) {
        case VersioningScheme::NoneDetected: return "none_detected";
        case VersioningScheme::UrlPath: return "url_path";
        case VersioningScheme::SemanticInUrl: return "semantic_in_url";
        case VersioningScheme::MediaTypeHeader: return "media_type_header";
    }
    return "?";
}

VersioningScheme versioning_scheme_from_string(std::string_view s) {
    for (auto v : kAllVersioningSchemes)
        if (to_string(v) == s) return v;
    throw InvalidSpec("unknown versioning scheme: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Byte helpers

bool is_valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        auto c = static_cast<unsigned char>(s[i]);
        std::size_t len;
        std::uint32_t cp;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > s.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        static constexpr std::uint32_t min_for_len[] = {0, 0, 0x80, 0x800, 0x10000};
        if (cp < min_for_len[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
        i += len;
    }
    return true;
}

namespace {
constexpr std::string_view kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::string_view in) {
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < in.size(); i += 3) {
        std::uint32_t v = (static_cast<unsigned char>(in[i]) << 16) | (static_cast<unsigned char>(in[i + 1]) << 8) |
                          static_cast<unsigned char>(in[i + 2]);
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += kB64[(v >> 6) & 63];
        out += kB64[v & 63];
    }
    if (i + 1 == in.size()) {
        std::uint32_t v = static_cast<unsigned char>(in[i]) << 16;
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == in.size()) {
        std::uint32_t v = (static_cast<unsigned char>(in[i]) << 16) | (static_cast<unsigned char>(in[i + 1]) << 8);
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += kB64[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::string base64_decode(std::string_view in) {
    if (in.size() % 4 != 0) throw Error("base64 length not a multiple of 4");
    std::array<int, 256> rev;
    rev.fill(-1);
    for (std::size_t k = 0; k < kB64.size(); ++k) rev[static_cast<unsigned char>(kB64[k])] = static_cast<int>(k);
    std::string out;
    out.reserve(in.size() / 4 * 3);
    for (std::size_t i = 0; i < in.size(); i += 4) {
        int pad = 0;
        std::uint32_t v = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            char c = in[i + k];
            if (c == '=' && i + 4 == in.size() && k >= 2) {
                ++pad;
                v <<= 6;
                continue;
            }
            int d = rev[static_cast<unsigned char>(c)];
            if (d < 0 || pad) throw Error("invalid base64 character");
            v = (v << 6) | static_cast<std::uint32_t>(d);
        }
        out += static_cast<char>((v >> 16) & 0xFF);
        if (pad < 2) out += static_cast<char>((v >> 8) & 0xFF);
        if (pad < 1) out += static_cast<char>(v & 0xFF);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Record encoding

namespace {

void put_body(json& j, const std::string& body) {
    if (is_valid_utf8(body)) j["body"] = body;
    else j["body_b64"] = base64_encode(body);
}

std::string get_body(const json& j) {
    if (j.contains("body_b64")) return base64_decode(j["body_b64"].get<std::string>());
    return j.value("body", std::string());
}

json headers_json(const http::Headers& h) {
    json arr = json::array();
    for (const auto& f : h) arr.push_back(json::array({f.name, f.value}));
    return arr;
}

http::Headers headers_from(const json& j) {
    http::Headers h;
    for (const auto& pair : j) h.add(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
    return h;
}

}  // namespace

void to_json(json& j, const CapturedExchange& e) {
    json req{{"method", e.request.method},
             {"url", e.request.target},
             {"version", e.request.version},
             {"headers", headers_json(e.request.headers)}};
    put_body(req, e.request.body);
    json resp{{"status", e.response.status},
              {"reason", e.response.reason},
              {"version", e.response.version},
              {"headers", headers_json(e.response.headers)}};
    put_body(resp, e.response.body);
    j = json{{"id", e.id},
             {"wall_ms", e.wall_ms},
             {"mono_ns", e.mono_ns},
             {"request", std::move(req)},
             {"response", std::move(resp)},
             {"origin", to_string(e.origin)},
             {"rule_id", e.rule_id ? json(*e.rule_id) : json(nullptr)},
             {"mutation", e.mutation ? json(*e.mutation) : json(nullptr)},
             {"client_aborted", e.client_aborted}};
}

void from_json(const json& j, CapturedExchange& e) {
    CapturedExchange out;
    out.id = j.at("id").get<std::uint64_t>();
    out.wall_ms = j.at("wall_ms").get<std::int64_t>();
    out.mono_ns = j.at("mono_ns").get<std::int64_t>();
    const auto& req = j.at("request");
    out.request.method = req.at("method").get<std::string>();
    out.request.target = req.at("url").get<std::string>();
    out.request.version = req.value("version", std::string("HTTP/1.1"));
    out.request.headers = headers_from(req.at("headers"));
    out.request.body = get_body(req);
    const auto& resp = j.at("response");
    out.response.status = resp.at("status").get<int>();
    out.response.reason = resp.value("reason", std::string());
    out.response.version = resp.value("version", std::string("HTTP/1.1"));
    out.response.headers = headers_from(resp.at("headers"));
    out.response.body = get_body(resp);
    out.origin = origin_from_string(j.at("origin").get<std::string>());
    if (j.contains("rule_id") && !j["rule_id"].is_null()) out.rule_id = j["rule_id"].get<std::uint64_t>();
    if (j.contains("mutation") && !j["mutation"].is_null()) out.mutation = j["mutation"].get<MutationSpec>();
    out.client_aborted = j.value("client_aborted", false);
    if (out.origin == Origin::MutatedLocal && !out.rule_id)
        throw InvalidSpec("mutated exchange " + std::to_string(out.id) + " has no rule_id");
    e = std::move(out);
}

void to_json(json& j, const ObservationRecord& o) {
    j = json{{"exchange_id", o.exchange_id},
             {"target_name", o.target_name},
             {"mutation", o.mutation},
             {"behavior", to_string(o.behavior)},
             {"note", o.note},
             {"auto_signals",
              {{"retry_count", o.auto_signals.retry_count},
               {"seconds_to_next_request", o.auto_signals.seconds_to_next_request
                                               ? json(*o.auto_signals.seconds_to_next_request)
                                               : json(nullptr)},
               {"client_aborted", o.auto_signals.client_aborted}}}};
}

void from_json(const json& j, ObservationRecord& o) {
    ObservationRecord out;
    out.exchange_id = j.at("exchange_id").get<std::uint64_t>();
    out.target_name = j.value("target_name", std::string());
    out.mutation = j.at("mutation").get<MutationSpec>();
    out.behavior = behavior_from_string(j.at("behavior").get<std::string>());
    out.note = j.value("note", std::string());
    if (j.contains("auto_signals")) {
        const auto& a = j["auto_signals"];
        out.auto_signals.retry_count = a.value("retry_count", 0u);
        if (a.contains("seconds_to_next_request") && !a["seconds_to_next_request"].is_null())
            out.auto_signals.seconds_to_next_request = a["seconds_to_next_request"].get<double>();
        out.auto_signals.client_aborted = a.value("client_aborted", false);
    }
    o = std::move(out);
}

void to_json(json& j, const VersioningInfo& v) { j = json{{"scheme", to_string(v.scheme)}, {"token", v.token}}; }

void from_json(const json& j, VersioningInfo& v) {
    VersioningInfo out;
    out.scheme = versioning_scheme_from_string(j.at("scheme").get<std::string>());
    out.token = j.value("token", std::string());
    if (out.scheme != VersioningScheme::NoneDetected && out.token.empty())
        throw InvalidSpec("versioning token required for scheme " + std::string(to_string(out.scheme)));
    v = std::move(out);
}

void to_json(json& j, const TargetProfile& p) {
    j = json{{"target_name", p.target_name},
             {"caching", to_string(p.caching)},
             {"versioning", p.versioning},
             {"notes", p.notes}};
}

void from_json(const json& j, TargetProfile& p) {
    TargetProfile out;
    out.target_name = j.at("target_name").get<std::string>();
    out.caching = caching_kind_from_string(j.value("caching", std::string("unknown")));
    if (j.contains("versioning")) out.versioning = j["versioning"].get<VersioningInfo>();
    out.notes = j.value("notes", std::string());
    p = std::move(out);
}

namespace {

json tagged(std::string_view type, json body) {
    json out{{"type", type}};
    for (auto& [k, v] : body.items()) out[k] = std::move(v);
    return out;
}

json untagged(json j) {
    j.erase("type");
    return j;
}

// Header values are not guaranteed UTF-8; those bytes are replaced rather than
// failing the whole record.
std::string dump_line(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

}  // namespace

json make_record(std::string_view type, const json& body) { return tagged(type, body); }

json record_body(json record, std::string_view type) {
    if (!record.is_object()) throw InvalidSpec("record must be a JSON object");
    if (record.contains("type") && record["type"] != type)
        throw InvalidSpec("expected a " + std::string(type) + " record");
    return untagged(std::move(record));
}

namespace {

json header_record() { return {{"type", "header"}, {"format_version", kSessionFormatVersion}}; }

}  // namespace

void write_session(std::ostream& out, const SessionData& s) {
    out << dump_line(header_record()) << '\n';
    for (const auto& e : s.exchanges) out << dump_line(tagged("exchange", e)) << '\n';
    for (const auto& r : s.rules) out << dump_line(tagged("rule", r)) << '\n';
    for (const auto& o : s.observations) out << dump_line(tagged("observation", o)) << '\n';
    for (const auto& p : s.profiles) out << dump_line(tagged("profile", p)) << '\n';
}

SessionData read_session(std::istream& in) {
    SessionData data;
    std::unordered_map<std::uint64_t, std::size_t> exchange_index;
    std::map<std::uint64_t, RewriteRule> rules;
    std::map<std::string, TargetProfile> profiles;
    std::vector<std::size_t> observation_lines;

    std::string line;
    std::size_t line_no = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") {
            if (!saw_header) throw CorruptSessionFile(line_no, "missing header record");
            continue;
        }
        if (in.eof()) {
            // Records always end with '\n'; a final line without one was cut short.
            throw CorruptSessionFile(line_no, "truncated record");
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw CorruptSessionFile(line_no, e.what());
        }
        try {
            if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
                throw CorruptSessionFile(line_no, "record without a type");
            const auto type = j["type"].get<std::string>();
            if (!saw_header) {
                if (type != "header") throw CorruptSessionFile(line_no, "missing header record");
                if (j.value("format_version", 0) != kSessionFormatVersion)
                    throw CorruptSessionFile(line_no, "unsupported format version");
                saw_header = true;
                continue;
            }
            if (type == "exchange") {
                auto e = untagged(std::move(j)).get<CapturedExchange>();
                if (auto it = exchange_index.find(e.id); it != exchange_index.end()) {
                    data.exchanges[it->second] = std::move(e);
                } else {
                    if (!data.exchanges.empty() && e.id <= data.exchanges.back().id)
                        throw CorruptSessionFile(line_no, "exchange ids out of order");
                    exchange_index.emplace(e.id, data.exchanges.size());
                    data.exchanges.push_back(std::move(e));
                }
            } else if (type == "rule") {
                auto r = untagged(std::move(j)).get<RewriteRule>();
                rules[r.rule_id] = std::move(r);
            } else if (type == "rule_deleted") {
                rules.erase(j.at("rule_id").get<std::uint64_t>());
            } else if (type == "observation") {
                data.observations.push_back(untagged(std::move(j)).get<ObservationRecord>());
                observation_lines.push_back(line_no);
            } else if (type == "profile") {
                auto p = untagged(std::move(j)).get<TargetProfile>();
                profiles[p.target_name] = std::move(p);
            } else if (type == "header") {
                throw CorruptSessionFile(line_no, "duplicate header record");
            } else {
                throw CorruptSessionFile(line_no, "unknown record type " + type);
            }
        } catch (const CorruptSessionFile&) {
            throw;
        } catch (const std::exception& e) {
            throw CorruptSessionFile(line_no, e.what());
        }
    }
    if (!saw_header) throw CorruptSessionFile(line_no + 1, "missing header record");

    for (std::size_t k = 0; k < data.observations.size(); ++k) {
        auto it = exchange_index.find(data.observations[k].exchange_id);
        if (it == exchange_index.end())
            throw CorruptSessionFile(observation_lines[k], "observation references unknown exchange");
        if (data.exchanges[it->second].origin != Origin::MutatedLocal)
            throw CorruptSessionFile(observation_lines[k], "observation references an unmutated exchange");
    }
    for (auto& [_, r] : rules) data.rules.push_back(std::move(r));
    for (auto& [_, p] : profiles) data.profiles.push_back(std::move(p));
    return data;
}

void export_session(const Session& s, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write session file " + path.string());
    write_session(out, s.data());
    out.flush();
    if (!out) throw Error("failed writing session file " + path.string());
}

SessionData import_session(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open session file " + path.string());
    return read_session(in);
}

// ---------------------------------------------------------------------------
// Session

namespace {

std::int64_t now_wall_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::int64_t now_mono_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace

Session::Session(SessionData data) {
    for (auto& e : data.exchanges) {
        next_id_ = std::max(next_id_, e.id + 1);
        index_.emplace(e.id, exchanges_.size());
        exchanges_.push_back(std::move(e));
    }
    for (auto& r : data.rules) rules_[r.rule_id] = std::move(r);
    observations_ = std::move(data.observations);
    for (auto& p : data.profiles) profiles_[p.target_name] = std::move(p);
}

Session::~Session() = default;

void Session::journal(const json& record) {
    if (!journal_.is_open()) return;
    journal_ << dump_line(record) << '\n';
    journal_.flush();
}

void Session::open_journal(const std::filesystem::path& path) {
    std::lock_guard lock(mu_);
    journal_.close();
    journal_.open(path, std::ios::binary | std::ios::trunc);
    if (!journal_) throw Error("cannot open session journal " + path.string());
    SessionData snapshot;
    snapshot.exchanges = exchanges_;
    for (const auto& [_, r] : rules_) snapshot.rules.push_back(r);
    snapshot.observations = observations_;
    for (const auto& [_, p] : profiles_) snapshot.profiles.push_back(p);
    write_session(journal_, snapshot);
    journal_.flush();
}

CapturedExchange Session::append(CapturedExchange e) {
    std::lock_guard lock(mu_);
    e.id = next_id_++;
    if (e.wall_ms == 0) e.wall_ms = now_wall_ms();
    if (e.mono_ns == 0) e.mono_ns = now_mono_ns();
    index_.emplace(e.id, exchanges_.size());
    exchanges_.push_back(e);
    journal(tagged("exchange", e));
    return e;
}

std::optional<CapturedExchange> Session::exchange(std::uint64_t id) const {
    std::lock_guard lock(mu_);
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return exchanges_[it->second];
}

std::vector<CapturedExchange> Session::exchanges(std::size_t offset, std::size_t limit) const {
    std::lock_guard lock(mu_);
    if (offset >= exchanges_.size()) return {};
    auto end = offset + std::min(limit, exchanges_.size() - offset);
    return {exchanges_.begin() + static_cast<long>(offset), exchanges_.begin() + static_cast<long>(end)};
}

std::size_t Session::exchange_count() const {
    std::lock_guard lock(mu_);
    return exchanges_.size();
}

void Session::mark_client_aborted(std::uint64_t id) {
    std::lock_guard lock(mu_);
    auto it = index_.find(id);
    if (it == index_.end()) throw UnknownExchange(id);
    exchanges_[it->second].client_aborted = true;
    journal(tagged("exchange", exchanges_[it->second]));
}

ObservationRecord Session::add_observation(ObservationRecord o) {
    {
        std::lock_guard lock(mu_);
        observations_.push_back(o);
        journal(tagged("observation", o));
    }
    observed_.notify_all();
    return o;
}

std::vector<ObservationRecord> Session::observations() const {
    std::lock_guard lock(mu_);
    return observations_;
}

std::size_t Session::observation_count() const {
    std::lock_guard lock(mu_);
    return observations_.size();
}

bool Session::wait_for_observations(std::size_t count, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    return observed_.wait_for(lock, timeout, [&] { return observations_.size() >= count; });
}

void Session::put_profile(TargetProfile p) {
    std::lock_guard lock(mu_);
    journal(tagged("profile", p));
    profiles_[p.target_name] = std::move(p);
}

std::optional<TargetProfile> Session::profile(const std::string& name) const {
    std::lock_guard lock(mu_);
    auto it = profiles_.find(name);
    if (it == profiles_.end()) return std::nullopt;
    return it->second;
}

std::vector<TargetProfile> Session::profiles() const {
    std::lock_guard lock(mu_);
    std::vector<TargetProfile> out;
    for (const auto& [_, p] : profiles_) out.push_back(p);
    return out;
}

void Session::put_rule(const RewriteRule& r) {
    std::lock_guard lock(mu_);
    rules_[r.rule_id] = r;
    journal(tagged("rule", r));
}

void Session::drop_rule(std::uint64_t id) {
    std::lock_guard lock(mu_);
    rules_.erase(id);
    journal(json{{"type", "rule_deleted"}, {"rule_id", id}});
}

std::optional<RewriteRule> Session::rule(std::uint64_t id) const {
    std::lock_guard lock(mu_);
    auto it = rules_.find(id);
    if (it == rules_.end()) return std::nullopt;
    return it->second;
}

std::vector<RewriteRule> Session::rules() const {
    std::lock_guard lock(mu_);
    std::vector<RewriteRule> out;
    for (const auto& [_, r] : rules_) out.push_back(r);
    return out;
}

SessionData Session::data() const {
    std::lock_guard lock(mu_);
    SessionData out;
    out.exchanges = exchanges_;
    for (const auto& [_, r] : rules_) out.rules.push_back(r);
    out.observations = observations_;
    for (const auto& [_, p] : profiles_) out.profiles.push_back(p);
    return out;
}

// ---------------------------------------------------------------------------
// Observations

EndpointMatcher endpoint_of(const CapturedExchange& e, const std::optional<RewriteRule>& rule) {
    if (rule) return rule->matcher;
    EndpointMatcher m;
    if (auto url = http::Url::parse(e.request.target)) {
        m.host = url->authority();
        m.path = url->path;
    }
    return m;
}

AutoSignals compute_auto_signals(const std::vector<CapturedExchange>& exchanges, const CapturedExchange& subject,
                                 const EndpointMatcher& matcher, std::chrono::milliseconds window) {
    AutoSignals s;
    s.client_aborted = subject.client_aborted;
    const auto window_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(window).count();
    for (const auto& e : exchanges) {
        if (e.id <= subject.id) continue;
        auto key = RequestKey::from_url(e.request.method, e.request.target);
        if (!key || !matcher.matches(*key)) continue;
        const auto delta = e.mono_ns - subject.mono_ns;
        if (!s.seconds_to_next_request) s.seconds_to_next_request = static_cast<double>(delta) / 1e9;
        if (delta <= window_ns) ++s.retry_count;
    }
    return s;
}

ObservationRecord record_observation(Session& s, std::uint64_t exchange_id, Behavior behavior, std::string note,
                                     std::chrono::milliseconds window) {
    auto ex = s.exchange(exchange_id);
    if (!ex) throw UnknownExchange(exchange_id);
    // Marker-only probes carry no mutation spec and are not behavior observations.
    if (ex->origin != Origin::MutatedLocal || !ex->mutation) throw NotMutated(exchange_id);
    auto rule = ex->rule_id ? s.rule(*ex->rule_id) : std::nullopt;
    ObservationRecord o;
    o.exchange_id = exchange_id;
    o.target_name = rule ? rule->target_name : endpoint_of(*ex, std::nullopt).host;
    o.mutation = *ex->mutation;
    o.behavior = behavior;
    o.note = std::move(note);
    o.auto_signals = compute_auto_signals(s.exchanges(), *ex, endpoint_of(*ex, rule), window);
    return s.add_observation(std::move(o));
}

}  // namespace mutproxy
