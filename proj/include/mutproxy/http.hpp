#pragma once

// Minimal blocking HTTP/1.1 wire layer used by the proxy and the simulated
// client. Bodies are always fully buffered; chunked transfer coding is
// decoded on read.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mutproxy/errors.hpp"

namespace mutproxy::http {

class ProtocolError : public Error {
public:
    using Error::Error;
};

class ConnectError : public Error {
public:
    using Error::Error;
};

struct Header {
    std::string name;
    std::string value;
    bool operator==(const Header&) const = default;
};

class Headers {
public:
    Headers() = default;
    Headers(std::initializer_list<Header> init) : fields_(init) {}

    std::optional<std::string> get(std::string_view name) const;
    bool has(std::string_view name) const { return get(name).has_value(); }
    void set(std::string name, std::string value);
    void add(std::string name, std::string value) { fields_.push_back({std::move(name), std::move(value)}); }
    void remove(std::string_view name);

    auto begin() const { return fields_.begin(); }
    auto end() const { return fields_.end(); }
    std::size_t size() const { return fields_.size(); }
    const std::vector<Header>& fields() const { return fields_; }

    bool operator==(const Headers&) const = default;

private:
    std::vector<Header> fields_;
};

bool iequals(std::string_view a, std::string_view b);
bool is_hop_by_hop(std::string_view name);

struct Request {
    std::string method = "GET";
    std::string target;  // as on the request line, or absolute URL once recorded
    std::string version = "HTTP/1.1";
    Headers headers;
    std::string body;
    bool operator==(const Request&) const = default;
};

struct Response {
    int status = 200;
    std::string reason;
    std::string version = "HTTP/1.1";
    Headers headers;
    std::string body;
    bool operator==(const Response&) const = default;
};

std::string_view default_reason(int status);

struct Url {
    std::string scheme = "http";
    std::string host;
    std::uint16_t port = 80;
    std::string path = "/";
    std::string query;  // without '?'

    // Accepts "http://host[:port][/path][?query]".
    static std::optional<Url> parse(std::string_view absolute);
    std::string origin_form() const { return query.empty() ? path : path + "?" + query; }
    std::string authority() const;
    std::string str() const;
};

std::string percent_decode(std::string_view s);
std::vector<std::pair<std::string, std::string>> parse_query(std::string_view query);

// Owning socket descriptor.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& o) noexcept : fd_(o.release()) {}
    Socket& operator=(Socket&& o) noexcept;
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket() { close(); }

    int fd() const noexcept { return fd_; }
    bool valid() const noexcept { return fd_ >= 0; }
    int release() noexcept {
        int f = fd_;
        fd_ = -1;
        return f;
    }
    void close() noexcept;
    void shutdown() noexcept;
    void set_timeout(std::chrono::milliseconds timeout);

private:
    int fd_ = -1;
};

struct Listener {
    Socket socket;
    std::string host;
    std::uint16_t port = 0;
};

// Binds and listens; port 0 picks an ephemeral port. Throws BindFailure.
Listener listen_tcp(const std::string& host, std::uint16_t port, int backlog = 128);
// Splits "host:port" (port optional, defaulting to default_port).
std::pair<std::string, std::uint16_t> split_host_port(std::string_view s, std::uint16_t default_port);

// Throws ConnectError.
Socket connect_tcp(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout);
std::optional<Socket> accept_connection(const Socket& listener);

// Buffered reader/writer over a socket.
class Stream {
public:
    explicit Stream(Socket& s) : socket_(s) {}

    // nullopt on EOF before any byte of the line.
    std::optional<std::string> read_line(std::size_t limit = 64 * 1024);
    std::string read_exact(std::size_t n);
    std::string read_to_eof(std::size_t limit);
    void write_all(std::string_view data);
    // Bytes already buffered but not consumed.
    std::string take_buffered();

private:
    bool fill();

    Socket& socket_;
    std::string buf_;
    std::size_t pos_ = 0;
};

inline constexpr std::size_t kMaxBody = 64 * 1024 * 1024;

// nullopt when the peer closed the connection cleanly between requests.
std::optional<Request> read_request(Stream& in);
// request_method decides whether a body may follow (HEAD).
Response read_response(Stream& in, std::string_view request_method);

std::string serialize(const Request& r);
std::string serialize(const Response& r);

// Decodes a Content-Encoding (gzip, deflate, identity). Throws ProtocolError.
std::string decode_content(std::string_view body, std::string_view encoding);

// Opens a connection, sends req as given and reads one response. Throws
// ConnectError, ProtocolError.
Response round_trip(const std::string& host, std::uint16_t port, const Request& req,
                    std::chrono::milliseconds timeout = std::chrono::seconds(30));

// True when the connection should stay open after this message.
bool keep_alive(const Request& r);

}  // namespace mutproxy::http
