#pragma once

#include <stdexcept>
#include <string>

namespace ctxevo {

// Exit-code mapping used by the CLI: UsageError -> 1, RunError -> 2,
// BackendError -> 3.

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Transport-level failure talking to a model backend. `status` holds the
// last HTTP status seen, or 0 for connection-level failures.
struct BackendError : std::runtime_error {
  int status = 0;
  explicit BackendError(const std::string& what, int status_code = 0)
      : std::runtime_error(what), status(status_code) {}
};

}  // namespace ctxevo
