#include "mutproxy/http.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <charconv>
#include <cstring>

namespace mutproxy::http {

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
           });
}

bool is_hop_by_hop(std::string_view name) {
    static constexpr std::string_view hop[] = {"connection",          "keep-alive", "proxy-authenticate",
                                               "proxy-authorization", "te",         "trailer",
                                               "transfer-encoding",   "upgrade",    "proxy-connection"};
    return std::any_of(std::begin(hop), std::end(hop), [&](std::string_view h) { return iequals(h, name); });
}

std::optional<std::string> Headers::get(std::string_view name) const {
    for (const auto& h : fields_)
        if (iequals(h.name, name)) return h.value;
    return std::nullopt;
}

void Headers::set(std::string name, std::string value) {
    for (auto& h : fields_) {
        if (iequals(h.name, name)) {
            h.value = std::move(value);
            // Drop any duplicates of the same field.
            auto first = &h;
            std::erase_if(fields_, [&](const Header& o) { return &o != first && iequals(o.name, first->name); });
            return;
        }
    }
    fields_.push_back({std::move(name), std::move(value)});
}

void Headers::remove(std::string_view name) {
    std::erase_if(fields_, [&](const Header& h) { return iequals(h.name, name); });
}

std::string_view default_reason(int status) {
    switch (status) {
        case 100: return "Continue";
        case 200: return "OK";
        case 201: return "Created";
        case 202: return "Accepted";
        case 204: return "No Content";
        case 206: return "Partial Content";
        case 301: return "Moved Permanently";
        case 302: return "Found";
        case 304: return "Not Modified";
        case 307: return "Temporary Redirect";
        case 400: return "Bad Request";
        case 401: return "Unauthorized";
        case 403: return "Forbidden";
        case 404: return "Not Found";
        case 409: return "Conflict";
        case 500: return "Internal Server Error";
        case 502: return "Bad Gateway";
        case 503: return "Service Unavailable";
        case 504: return "Gateway Timeout";
        default: return "Status";
    }
}

std::optional<Url> Url::parse(std::string_view s) {
    constexpr std::string_view scheme = "http://";
    if (s.size() < scheme.size() || !iequals(s.substr(0, scheme.size()), scheme)) return std::nullopt;
    s.remove_prefix(scheme.size());
    Url u;
    auto slash = s.find_first_of("/?");
    auto authority = s.substr(0, slash);
    if (authority.empty()) return std::nullopt;
    auto [host, port] = split_host_port(authority, 80);
    if (host.empty()) return std::nullopt;
    u.host = host;
    u.port = port;
    if (slash != std::string_view::npos) {
        std::string rest(s.substr(slash));
        auto q = rest.find('?');
        u.path = rest.substr(0, q);
        if (u.path.empty()) u.path = "/";
        if (q != std::string::npos) u.query = rest.substr(q + 1);
    }
    return u;
}

std::string Url::authority() const {
    return port == 80 ? host : host + ":" + std::to_string(port);
}

std::string Url::str() const {
    return "http://" + authority() + origin_form();
}

std::string percent_decode(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%' && i + 2 < s.size()) {
            unsigned v = 0;
            auto [p, ec] = std::from_chars(s.data() + i + 1, s.data() + i + 3, v, 16);
            if (ec == std::errc() && p == s.data() + i + 3) {
                out += static_cast<char>(v);
                i += 2;
                continue;
            }
        }
        out += s[i];
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> parse_query(std::string_view query) {
    std::vector<std::pair<std::string, std::string>> out;
    std::size_t pos = 0;
    while (pos <= query.size() && !query.empty()) {
        auto amp = query.find('&', pos);
        auto part = query.substr(pos, amp == std::string_view::npos ? std::string_view::npos : amp - pos);
        if (!part.empty()) {
            auto eq = part.find('=');
            std::string key(part.substr(0, eq));
            std::string value = eq == std::string_view::npos ? "" : std::string(part.substr(eq + 1));
            std::replace(key.begin(), key.end(), '+', ' ');
            std::replace(value.begin(), value.end(), '+', ' ');
            out.emplace_back(percent_decode(key), percent_decode(value));
        }
        if (amp == std::string_view::npos) break;
        pos = amp + 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sockets

Socket& Socket::operator=(Socket&& o) noexcept {
    if (this != &o) {
        close();
        fd_ = o.release();
    }
    return *this;
}

void Socket::close() noexcept {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

void Socket::shutdown() noexcept {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::set_timeout(std::chrono::milliseconds timeout) {
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
    tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

std::pair<std::string, std::uint16_t> split_host_port(std::string_view s, std::uint16_t default_port) {
    std::uint16_t port = default_port;
    std::string_view host = s;
    if (!s.empty() && s.front() == '[') {
        auto close = s.find(']');
        host = s.substr(1, close == std::string_view::npos ? std::string_view::npos : close - 1);
        if (close != std::string_view::npos && close + 1 < s.size() && s[close + 1] == ':')
            std::from_chars(s.data() + close + 2, s.data() + s.size(), port);
        return {std::string(host), port};
    }
    if (auto colon = s.rfind(':'); colon != std::string_view::npos) {
        host = s.substr(0, colon);
        unsigned p = 0;
        auto [ptr, ec] = std::from_chars(s.data() + colon + 1, s.data() + s.size(), p);
        if (ec == std::errc() && ptr == s.data() + s.size() && p <= 65535) port = static_cast<std::uint16_t>(p);
    }
    return {std::string(host), port};
}

Listener listen_tcp(const std::string& host, std::uint16_t port, int backlog) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE | AI_NUMERICSERV;
    addrinfo* res = nullptr;
    const std::string service = std::to_string(port);
    if (int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res); rc != 0)
        throw BindFailure("cannot resolve listen address " + host + ": " + gai_strerror(rc));
    std::string last_error = "no usable address";
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        Socket s(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
        if (!s.valid()) continue;
        int one = 1;
        ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (::bind(s.fd(), ai->ai_addr, ai->ai_addrlen) != 0 || ::listen(s.fd(), backlog) != 0) {
            last_error = std::strerror(errno);
            continue;
        }
        sockaddr_storage bound{};
        socklen_t len = sizeof bound;
        ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
        std::uint16_t actual = bound.ss_family == AF_INET6
                                   ? ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port)
                                   : ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
        ::freeaddrinfo(res);
        return Listener{std::move(s), host, actual};
    }
    ::freeaddrinfo(res);
    throw BindFailure("cannot bind " + host + ":" + service + ": " + last_error);
}

Socket connect_tcp(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_NUMERICSERV;
    addrinfo* res = nullptr;
    const std::string service = std::to_string(port);
    if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
        throw ConnectError("cannot resolve " + host + ": " + gai_strerror(rc));
    std::string last_error = "no address";
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        Socket s(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, ai->ai_protocol));
        if (!s.valid()) continue;
        int rc = ::connect(s.fd(), ai->ai_addr, ai->ai_addrlen);
        if (rc != 0 && errno == EINPROGRESS) {
            pollfd pfd{s.fd(), POLLOUT, 0};
            rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
            if (rc == 1) {
                int err = 0;
                socklen_t len = sizeof err;
                ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
                rc = err == 0 ? 0 : -1;
                errno = err;
            } else {
                if (rc == 0) errno = ETIMEDOUT;
                rc = -1;
            }
        }
        if (rc != 0) {
            last_error = std::strerror(errno);
            continue;
        }
        int flags = ::fcntl(s.fd(), F_GETFL);
        ::fcntl(s.fd(), F_SETFL, flags & ~O_NONBLOCK);
        int one = 1;
        ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        s.set_timeout(timeout);
        ::freeaddrinfo(res);
        return s;
    }
    ::freeaddrinfo(res);
    throw ConnectError("cannot connect to " + host + ":" + service + ": " + last_error);
}

std::optional<Socket> accept_connection(const Socket& listener) {
    while (true) {
        int fd = ::accept4(listener.fd(), nullptr, nullptr, SOCK_CLOEXEC);
        if (fd >= 0) {
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return Socket(fd);
        }
        if (errno == EINTR || errno == ECONNABORTED) continue;
        return std::nullopt;
    }
}

// ---------------------------------------------------------------------------
// Stream

bool Stream::fill() {
    if (pos_ > 0 && pos_ == buf_.size()) {
        buf_.clear();
        pos_ = 0;
    }
    char chunk[16 * 1024];
    while (true) {
        ssize_t n = ::recv(socket_.fd(), chunk, sizeof chunk, 0);
        if (n > 0) {
            buf_.append(chunk, static_cast<std::size_t>(n));
            return true;
        }
        if (n == 0) return false;
        if (errno == EINTR) continue;
        if (errno == EAGAIN || errno == EWOULDBLOCK) throw ProtocolError("read timed out");
        throw ProtocolError(std::string("read failed: ") + std::strerror(errno));
    }
}

std::optional<std::string> Stream::read_line(std::size_t limit) {
    while (true) {
        auto nl = buf_.find('\n', pos_);
        if (nl != std::string::npos) {
            std::string line = buf_.substr(pos_, nl - pos_);
            pos_ = nl + 1;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            return line;
        }
        if (buf_.size() - pos_ > limit) throw ProtocolError("line too long");
        if (!fill()) {
            if (pos_ == buf_.size()) return std::nullopt;
            throw ProtocolError("connection closed mid-line");
        }
    }
}

std::string Stream::read_exact(std::size_t n) {
    while (buf_.size() - pos_ < n)
        if (!fill()) throw ProtocolError("connection closed before body was complete");
    std::string out = buf_.substr(pos_, n);
    pos_ += n;
    return out;
}

std::string Stream::read_to_eof(std::size_t limit) {
    while (fill())
        if (buf_.size() - pos_ > limit) throw ProtocolError("body too large");
    std::string out = buf_.substr(pos_);
    pos_ = buf_.size();
    return out;
}

std::string Stream::take_buffered() {
    std::string out = buf_.substr(pos_);
    buf_.clear();
    pos_ = 0;
    return out;
}

void Stream::write_all(std::string_view data) {
    while (!data.empty()) {
        ssize_t n = ::send(socket_.fd(), data.data(), data.size(), MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError(std::string("write failed: ") + std::strerror(errno));
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
}

// ---------------------------------------------------------------------------
// Messages

namespace {

std::string trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return std::string(s);
}

Headers read_headers(Stream& in) {
    Headers h;
    std::size_t total = 0;
    while (true) {
        auto line = in.read_line();
        if (!line) throw ProtocolError("connection closed inside headers");
        if (line->empty()) return h;
        total += line->size();
        if (total > 256 * 1024 || h.size() > 500) throw ProtocolError("header section too large");
        auto colon = line->find(':');
        if (colon == std::string::npos || colon == 0) throw ProtocolError("malformed header line");
        h.add(trim(std::string_view(*line).substr(0, colon)), trim(std::string_view(*line).substr(colon + 1)));
    }
}

bool is_chunked(const Headers& h) {
    auto te = h.get("Transfer-Encoding");
    if (!te) return false;
    std::string lower = *te;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    return lower.find("chunked") != std::string::npos;
}

std::string read_chunked(Stream& in) {
    std::string body;
    while (true) {
        auto line = in.read_line();
        if (!line) throw ProtocolError("connection closed inside chunked body");
        auto semi = line->find(';');
        std::string_view size_text = std::string_view(*line).substr(0, semi);
        while (!size_text.empty() && size_text.back() == ' ') size_text.remove_suffix(1);
        std::size_t size = 0;
        auto [p, ec] = std::from_chars(size_text.data(), size_text.data() + size_text.size(), size, 16);
        if (ec != std::errc() || size_text.empty()) throw ProtocolError("bad chunk size");
        if (body.size() + size > kMaxBody) throw ProtocolError("body too large");
        if (size == 0) {
            // Trailers.
            while (true) {
                auto t = in.read_line();
                if (!t || t->empty()) return body;
            }
        }
        body += in.read_exact(size);
        auto crlf = in.read_line();
        if (!crlf || !crlf->empty()) throw ProtocolError("missing CRLF after chunk");
    }
}

std::optional<std::size_t> content_length(const Headers& h) {
    auto cl = h.get("Content-Length");
    if (!cl) return std::nullopt;
    std::size_t n = 0;
    auto [p, ec] = std::from_chars(cl->data(), cl->data() + cl->size(), n);
    if (ec != std::errc() || p != cl->data() + cl->size()) throw ProtocolError("bad Content-Length");
    if (n > kMaxBody) throw ProtocolError("body too large");
    return n;
}

}  // namespace

std::optional<Request> read_request(Stream& in) {
    std::optional<std::string> line;
    do {
        line = in.read_line();
        if (!line) return std::nullopt;
    } while (line->empty());
    Request r;
    auto sp1 = line->find(' ');
    auto sp2 = line->rfind(' ');
    if (sp1 == std::string::npos || sp2 == sp1) throw ProtocolError("malformed request line");
    r.method = line->substr(0, sp1);
    r.target = line->substr(sp1 + 1, sp2 - sp1 - 1);
    r.version = line->substr(sp2 + 1);
    if (r.version.rfind("HTTP/1.", 0) != 0) throw ProtocolError("unsupported HTTP version");
    r.headers = read_headers(in);
    if (is_chunked(r.headers)) {
        r.body = read_chunked(in);
    } else if (auto n = content_length(r.headers)) {
        r.body = in.read_exact(*n);
    }
    return r;
}

Response read_response(Stream& in, std::string_view request_method) {
    Response r;
    while (true) {
        auto line = in.read_line();
        if (!line) throw ProtocolError("connection closed before response");
        auto sp1 = line->find(' ');
        if (sp1 == std::string::npos || line->rfind("HTTP/1.", 0) != 0) throw ProtocolError("malformed status line");
        r.version = line->substr(0, sp1);
        auto rest = std::string_view(*line).substr(sp1 + 1);
        auto sp2 = rest.find(' ');
        auto code = rest.substr(0, sp2);
        auto [p, ec] = std::from_chars(code.data(), code.data() + code.size(), r.status);
        if (ec != std::errc() || code.size() != 3) throw ProtocolError("malformed status code");
        r.reason = sp2 == std::string_view::npos ? "" : std::string(rest.substr(sp2 + 1));
        r.headers = read_headers(in);
        if (r.status >= 100 && r.status < 200 && r.status != 101) continue;  // interim
        break;
    }
    const bool no_body = request_method == "HEAD" || r.status == 204 || r.status == 304 || r.status < 200;
    if (no_body) return r;
    if (is_chunked(r.headers)) {
        r.body = read_chunked(in);
    } else if (auto n = content_length(r.headers)) {
        r.body = in.read_exact(*n);
    } else {
        r.body = in.read_to_eof(kMaxBody);
    }
    return r;
}

std::string serialize(const Request& r) {
    std::string out = r.method + " " + r.target + " " + r.version + "\r\n";
    for (const auto& h : r.headers) out += h.name + ": " + h.value + "\r\n";
    out += "\r\n";
    out += r.body;
    return out;
}

std::string serialize(const Response& r) {
    std::string out = r.version + " " + std::to_string(r.status) + " " +
                      (r.reason.empty() ? std::string(default_reason(r.status)) : r.reason) + "\r\n";
    for (const auto& h : r.headers) out += h.name + ": " + h.value + "\r\n";
    out += "\r\n";
    out += r.body;
    return out;
}

std::string decode_content(std::string_view body, std::string_view encoding) {
    if (encoding.empty() || iequals(encoding, "identity")) return std::string(body);
    const bool gzip = iequals(encoding, "gzip") || iequals(encoding, "x-gzip");
    if (!gzip && !iequals(encoding, "deflate")) throw ProtocolError("unsupported content encoding " + std::string(encoding));

    auto inflate_with = [&](int window_bits) -> std::optional<std::string> {
        z_stream zs{};
        if (inflateInit2(&zs, window_bits) != Z_OK) return std::nullopt;
        zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(body.data()));
        zs.avail_in = static_cast<uInt>(body.size());
        std::string out;
        char chunk[32 * 1024];
        int rc = Z_OK;
        while (rc != Z_STREAM_END) {
            zs.next_out = reinterpret_cast<Bytef*>(chunk);
            zs.avail_out = sizeof chunk;
            rc = inflate(&zs, Z_NO_FLUSH);
            if (rc != Z_OK && rc != Z_STREAM_END) {
                inflateEnd(&zs);
                return std::nullopt;
            }
            out.append(chunk, sizeof chunk - zs.avail_out);
            if (out.size() > kMaxBody) {
                inflateEnd(&zs);
                return std::nullopt;
            }
            if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
                inflateEnd(&zs);
                return std::nullopt;  // truncated stream
            }
        }
        inflateEnd(&zs);
        return out;
    };

    // gzip: 16+MAX_WBITS. deflate: zlib-wrapped first, then raw as some servers send.
    if (gzip) {
        if (auto out = inflate_with(16 + MAX_WBITS)) return *out;
    } else {
        if (auto out = inflate_with(MAX_WBITS)) return *out;
        if (auto out = inflate_with(-MAX_WBITS)) return *out;
    }
    throw ProtocolError("cannot decode " + std::string(encoding) + " body");
}

Response round_trip(const std::string& host, std::uint16_t port, const Request& req,
                    std::chrono::milliseconds timeout) {
    Socket s = connect_tcp(host, port, timeout);
    Stream io(s);
    io.write_all(serialize(req));
    return read_response(io, req.method);
}

bool keep_alive(const Request& r) {
    auto conn = r.headers.get("Connection");
    if (!conn) conn = r.headers.get("Proxy-Connection");
    if (r.version == "HTTP/1.0") return conn && iequals(*conn, "keep-alive");
    return !(conn && iequals(*conn, "close"));
}

}  // namespace mutproxy::http
