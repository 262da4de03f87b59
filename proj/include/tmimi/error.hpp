#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tmimi {

enum class ErrorKind {
  Shape,               // dimension mismatch between operands
  InvalidArgument,     // value outside the documented domain
  NonFinite,           // NaN or infinity where finite data is required
  PlanParse,           // malformed precision plan string
  InconsistentPlan,    // plan does not match the model configuration
  BadMagic,
  UnsupportedVersion,
  Checksum,
  Truncated,
  Format,              // structurally invalid file contents
  Io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::NonFinite: return "non-finite";
    case ErrorKind::PlanParse: return "plan-parse";
    case ErrorKind::InconsistentPlan: return "inconsistent-plan";
    case ErrorKind::BadMagic: return "bad-magic";
    case ErrorKind::UnsupportedVersion: return "unsupported-version";
    case ErrorKind::Checksum: return "checksum";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::Format: return "format";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace tmimi
