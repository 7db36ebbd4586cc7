#pragma once

#include <stdexcept>
#include <string>

namespace cift {

enum class ErrorCode {
    invalid_input,  // malformed user data or config
    not_found,
    conflict,       // illegal state transition
    io,
    corrupt,        // integrity check failed
    backend,        // external process / HTTP peer failed
    timeout,
    unsupported,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

    /// True for errors caused by the caller's input rather than the system.
    bool is_user_error() const noexcept {
        return code_ == ErrorCode::invalid_input || code_ == ErrorCode::not_found ||
               code_ == ErrorCode::conflict;
    }

private:
    ErrorCode code_;
};

}  // namespace cift
