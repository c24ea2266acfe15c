#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ebcl {

enum class ErrorKind {
  InvalidInput,
  NearSingular,
  InfeasiblePoint,
  RankDeficient,
  InfeasibleDimensions,
  CapacityExhausted,
  DegenerateBaseline,
  ParseError,
  ConfigError,
  IoError,
};

inline constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::NearSingular: return "NearSingular";
    case ErrorKind::InfeasiblePoint: return "InfeasiblePoint";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::InfeasibleDimensions: return "InfeasibleDimensions";
    case ErrorKind::CapacityExhausted: return "CapacityExhausted";
    case ErrorKind::DegenerateBaseline: return "DegenerateBaseline";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised by the whitening inverse square root; carries the eigenvalue that
/// fell below the admissible floor.
class NearSingularError : public Error {
 public:
  NearSingularError(double eigenvalue, const std::string& what)
      : Error(ErrorKind::NearSingular, what), eigenvalue_(eigenvalue) {}

  double eigenvalue() const noexcept { return eigenvalue_; }

 private:
  double eigenvalue_;
};

/// Parse failures remember the 1-based line they occurred on (0 if unknown).
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorKind::ParseError,
              line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

}  // namespace ebcl
