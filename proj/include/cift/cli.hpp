#pragma once

// Command-line surface. Exit codes: 0 success, 1 user error, 2 internal error.

#include <atomic>
#include <iosfwd>

namespace cift {

int command_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Set by SIGINT/SIGTERM while `daemon` or `serve` runs; settable by tests.
std::atomic<bool>& cli_stop_flag();

}  // namespace cift
