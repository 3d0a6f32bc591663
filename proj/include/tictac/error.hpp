#pragma once

#include <stdexcept>
#include <string>

namespace tictac {

/// Failure categories surfaced by the library. The CLI prints them as
/// `error_code=<name>` so scripts can branch on them.
enum class ErrorCode {
  ShapeMismatch,
  NotPositiveDefinite,
  SingularObservedBlock,
  InvalidArchitecture,
  NonPositiveVariance,
  DimensionTooSmall,
  MalformedCsv,
  TooFewColumns,
  DivergedLoss,
  InvalidArgument,
  IoError,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::SingularObservedBlock: return "SingularObservedBlock";
    case ErrorCode::InvalidArchitecture: return "InvalidArchitecture";
    case ErrorCode::NonPositiveVariance: return "NonPositiveVariance";
    case ErrorCode::DimensionTooSmall: return "DimensionTooSmall";
    case ErrorCode::MalformedCsv: return "MalformedCsv";
    case ErrorCode::TooFewColumns: return "TooFewColumns";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tictac
