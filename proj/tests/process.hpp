#pragma once

// Child-process runner with a kill timer.

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

extern char** environ;

namespace testsupport {

struct ProcessResult {
    int exit_code = -1;   // valid when !killed
    bool killed = false;  // the kill timer fired
    std::chrono::milliseconds elapsed{0};
};

class Process {
public:
    // Non-empty paths capture stdout / stderr into files.
    explicit Process(const std::vector<std::string>& argv, const std::string& out_path = "",
                     const std::string& err_path = "") {
        std::vector<char*> args;
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);
        posix_spawn_file_actions_t actions;
        posix_spawn_file_actions_init(&actions);
        const int flags = O_WRONLY | O_CREAT | O_TRUNC;
        if (!out_path.empty()) posix_spawn_file_actions_addopen(&actions, 1, out_path.c_str(), flags, 0644);
        if (!err_path.empty()) posix_spawn_file_actions_addopen(&actions, 2, err_path.c_str(), flags, 0644);
        start_ = std::chrono::steady_clock::now();
        const int rc = posix_spawn(&pid_, args[0], &actions, nullptr, args.data(), environ);
        posix_spawn_file_actions_destroy(&actions);
        if (rc != 0) throw std::runtime_error("cannot spawn " + argv[0]);
    }

    void signal(int sig) {
        if (pid_ > 0) ::kill(pid_, sig);
    }
    Process(const Process&) = delete;
    Process& operator=(const Process&) = delete;
    ~Process() {
        if (pid_ > 0) {
            ::kill(pid_, SIGKILL);
            ::waitpid(pid_, nullptr, 0);
        }
    }

    // Waits for exit; kills the child once `limit` has passed.
    ProcessResult wait(std::chrono::milliseconds limit) {
        ProcessResult r;
        const auto deadline = start_ + limit;
        int status = 0;
        while (true) {
            pid_t done = ::waitpid(pid_, &status, WNOHANG);
            if (done == pid_) break;
            if (std::chrono::steady_clock::now() >= deadline) {
                ::kill(pid_, SIGKILL);
                ::waitpid(pid_, &status, 0);
                r.killed = true;
                break;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        pid_ = -1;
        if (!r.killed && WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
        r.elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_);
        return r;
    }

private:
    pid_t pid_ = -1;
    std::chrono::steady_clock::time_point start_;
};

inline ProcessResult run_process(const std::vector<std::string>& argv, std::chrono::milliseconds limit) {
    Process p(argv);
    return p.wait(limit);
}

}  // namespace testsupport
