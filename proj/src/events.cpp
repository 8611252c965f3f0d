#include "mutproxy/events.hpp"

#include <algorithm>

namespace mutproxy {

std::uint64_t EventBus::publish(std::string type, nlohmann::json data) {
    std::uint64_t id;
    {
        std::lock_guard lock(mu_);
        id = next_id_++;
        history_.push_back(Event{id, std::move(type), std::move(data)});
        while (history_.size() > capacity_) history_.pop_front();
    }
    cv_.notify_all();
    return id;
}

std::vector<Event> EventBus::wait_after(std::uint64_t after, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return closed_ || (!history_.empty() && history_.back().id > after); });
    std::vector<Event> out;
    auto it = std::lower_bound(history_.begin(), history_.end(), after + 1,
                               [](const Event& e, std::uint64_t id) { return e.id < id; });
    out.assign(it, history_.end());
    return out;
}

std::uint64_t EventBus::last_id() const {
    std::lock_guard lock(mu_);
    return next_id_ - 1;
}

void EventBus::close() {
    {
        std::lock_guard lock(mu_);
        closed_ = true;
    }
    cv_.notify_all();
}

}  // namespace mutproxy
