#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mdgr {

enum class ErrorKind {
  kShapeMismatch,
  kNumericOverflow,
  kInvalidArgument,
  kOutOfRange,
  kParse,
  kIo,
  kFormat,
  kState,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library. `kind` lets callers (the CLI in
// particular) map failures to exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) {
    throw Error(kind, message);
  }
}

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "shape_mismatch";
    case ErrorKind::kNumericOverflow: return "numeric_overflow";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kOutOfRange: return "out_of_range";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kState: return "state";
  }
  return "unknown";
}

}  // namespace mdgr
