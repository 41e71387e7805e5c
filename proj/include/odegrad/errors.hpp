#pragma once

#include <stdexcept>
#include <string>

namespace odegrad {

enum class ErrorKind {
  DimensionMismatch,
  NonFinite,
  InvalidTape,
  OutOfSpan,
  MaxStepsExceeded,
  InvalidArgument,
  ConfigError,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::DimensionMismatch: return "dimension mismatch";
    case ErrorKind::NonFinite: return "non-finite value";
    case ErrorKind::InvalidTape: return "invalid tape";
    case ErrorKind::OutOfSpan: return "out of span";
    case ErrorKind::MaxStepsExceeded: return "max steps exceeded";
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::ConfigError: return "config error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace odegrad
