#pragma once

// In-process event stream with monotone ids. Subscribers poll by id so a
// slow reader never blocks publishers.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mutproxy {

struct Event {
    std::uint64_t id = 0;
    std::string type;  // flow-recorded, rule-changed, mutation-failed, campaign-step, campaign-finished
    nlohmann::json data;

    // {"id":..,"type":..,"data":..}
    nlohmann::json record() const { return {{"id", id}, {"type", type}, {"data", data}}; }
};

class EventBus {
public:
    explicit EventBus(std::size_t history = 100000) : capacity_(history) {}

    std::uint64_t publish(std::string type, nlohmann::json data);

    // Events with id > after. Blocks up to timeout when none are available yet.
    std::vector<Event> wait_after(std::uint64_t after, std::chrono::milliseconds timeout) const;
    std::vector<Event> since(std::uint64_t after) const { return wait_after(after, std::chrono::milliseconds(0)); }
    std::uint64_t last_id() const;

    // Wakes every waiter; later waits return immediately.
    void close();

private:
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::deque<Event> history_;
    std::size_t capacity_;
    std::uint64_t next_id_ = 1;
    bool closed_ = false;
};

}  // namespace mutproxy
