#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ris {

enum class ErrorCode {
  EmptyExpression,
  NoNounFound,
  ExpressionTooLong,
  ShapeMismatch,
  NonFinite,
  BadGroupCount,
  NotScalar,
  StaleTape,
  StateMismatch,
  BadImageSize,
  EmptyResultSet,
  MissingCheckpoint,
  CorruptManifest,
  CorruptCheckpoint,
  PlacementFailure,
  CannotDisambiguate,
  BadRunSum,
  ConfigError,
  IoError,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyExpression: return "EmptyExpression";
    case ErrorCode::NoNounFound: return "NoNounFound";
    case ErrorCode::ExpressionTooLong: return "ExpressionTooLong";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::BadGroupCount: return "BadGroupCount";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::StaleTape: return "StaleTape";
    case ErrorCode::StateMismatch: return "StateMismatch";
    case ErrorCode::BadImageSize: return "BadImageSize";
    case ErrorCode::EmptyResultSet: return "EmptyResultSet";
    case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorCode::CorruptManifest: return "CorruptManifest";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::PlacementFailure: return "PlacementFailure";
    case ErrorCode::CannotDisambiguate: return "CannotDisambiguate";
    case ErrorCode::BadRunSum: return "BadRunSum";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

// Every failure in the library surfaces as this exception; `code()` is the
// machine-readable kind, `what()` carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_name(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ris
