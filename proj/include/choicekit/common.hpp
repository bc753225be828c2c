#pragma once

#include <stdexcept>
#include <string>

namespace choicekit {

inline constexpr const char* kVersion = "0.1.0";

/// Error thrown by all choicekit operations on precondition violations,
/// malformed inputs, or unrecoverable numerical failures.  The message is
/// intended to be actionable (it names the offending column/row/parameter).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace choicekit
