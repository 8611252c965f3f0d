#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mutproxy {

// Root of every error this library throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MalformedDocument : public Error {
public:
    MalformedDocument(std::size_t position, std::string reason)
        : Error("malformed document at byte " + std::to_string(position) + ": " + reason),
          position_(position), reason_(std::move(reason)) {}

    std::size_t position() const noexcept { return position_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::size_t position_;
    std::string reason_;
};

class FormatMismatch : public Error {
public:
    using Error::Error;
};

class InvalidPath : public Error {
public:
    using Error::Error;
};

class InvalidSpec : public Error {
public:
    using Error::Error;
};

// Base for the failures an operator can report against a specific baseline.
class MutationError : public Error {
public:
    using Error::Error;
};

class TargetNotFound : public MutationError {
public:
    explicit TargetNotFound(std::string path)
        : MutationError("target not found: " + path), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class TargetNotEligible : public MutationError {
public:
    explicit TargetNotEligible(std::string path)
        : MutationError("target not eligible: " + path), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class NothingToMutate : public MutationError {
public:
    using MutationError::MutationError;
};

class EscalationExhausted : public MutationError {
public:
    EscalationExhausted(std::size_t requested, std::size_t available)
        : MutationError("escalation level " + std::to_string(requested) + " exceeds " +
                        std::to_string(available) + " removable fields"),
          requested_(requested), available_(available) {}
    std::size_t requested() const noexcept { return requested_; }
    std::size_t available() const noexcept { return available_; }

private:
    std::size_t requested_;
    std::size_t available_;
};

class InvalidStatus : public MutationError {
public:
    explicit InvalidStatus(int status)
        : MutationError("invalid HTTP status " + std::to_string(status)), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

// Session / campaign errors.
class UnknownExchange : public Error {
public:
    explicit UnknownExchange(std::uint64_t id)
        : Error("unknown exchange " + std::to_string(id)) {}
};

class NotMutated : public Error {
public:
    explicit NotMutated(std::uint64_t id)
        : Error("exchange " + std::to_string(id) + " was not served by a rewrite rule") {}
};

class NoBaseline : public Error {
public:
    using Error::Error;
};

class InsufficientEvidence : public Error {
public:
    using Error::Error;
};

class CorruptSessionFile : public Error {
public:
    CorruptSessionFile(std::size_t line, const std::string& what)
        : Error("corrupt session file at line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class InconsistentRecord : public Error {
public:
    using Error::Error;
};

class IllegalTransition : public Error {
public:
    using Error::Error;
};

class UnknownRule : public Error {
public:
    explicit UnknownRule(std::uint64_t id) : Error("unknown rule " + std::to_string(id)) {}
};

class BindFailure : public Error {
public:
    using Error::Error;
};

class ProxyUnreachable : public Error {
public:
    using Error::Error;
};

}  // namespace mutproxy
