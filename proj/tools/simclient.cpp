// Scripted client used to exercise the proxy end to end.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "mutproxy/errors.hpp"
#include "mutproxy/simclient.hpp"

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw mutproxy::Error("cannot read " + path);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scripted HTTP client with a configurable fragility matrix"};
    mutproxy::SimOptions opts;
    std::string proxy, matrix_path, expect_path, format, log_path;
    unsigned interval_ms = 100, timeout_ms = 10000;
    app.add_option("--url", opts.url, "Endpoint to fetch (absolute http URL)")->required();
    app.add_option("--proxy", proxy, "Proxy host:port");
    app.add_option("--matrix", matrix_path, "Fragility matrix JSON file");
    app.add_option("--expect", expect_path, "File holding the expected body (default: first response)");
    app.add_option("--format", format, "json or xml (default: sniffed)")->check(CLI::IsMember({"json", "xml"}));
    app.add_option("--cycles", opts.cycles, "Number of fetch cycles");
    app.add_option("--interval-ms", interval_ms, "Pause between fetches");
    app.add_option("--timeout-retries", opts.timeout_retries, "Retries before the timeout reaction");
    app.add_option("--request-timeout-ms", timeout_ms, "Per-request timeout");
    app.add_option("--log", log_path, "Reaction log file (default: stdout)");
    CLI11_PARSE(app, argc, argv);

    try {
        if (!proxy.empty()) opts.proxy = proxy;
        if (!matrix_path.empty())
            opts.matrix = nlohmann::json::parse(slurp(matrix_path)).get<mutproxy::FragilityMatrix>();
        if (!expect_path.empty()) opts.expected = slurp(expect_path);
        if (!format.empty()) opts.format = mutproxy::format_from_string(format);
        opts.interval = std::chrono::milliseconds(interval_ms);
        opts.request_timeout = std::chrono::milliseconds(timeout_ms);

        std::ofstream log_file;
        if (!log_path.empty()) {
            log_file.open(log_path, std::ios::app);
            if (!log_file) throw mutproxy::Error("cannot open log " + log_path);
        }
        std::ostream& log = log_path.empty() ? std::cout : log_file;
        // Rendered fields go to stderr when the log owns stdout.
        std::ostream& echo = log_path.empty() ? std::cerr : std::cout;
        return mutproxy::run_simclient(opts, log, echo);
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "simclient: bad matrix: " << e.what() << "\n";
        return 1;
    } catch (const mutproxy::InvalidSpec& e) {
        std::cerr << "simclient: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "simclient: " << e.what() << "\n";
        return 2;
    }
}
