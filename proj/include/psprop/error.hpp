#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace psprop {

enum class ErrorCode {
  // numerical
  NotPositiveDefinite,
  AsymmetricInput,
  OutOfRange,
  Separation,
  RankDeficient,
  NoConvergence,
  DimensionMismatch,
  DegenerateLabels,
  SingleClass,
  PartitionFailure,
  MissingOutcome,
  LeverageOne,
  EmptyInput,
  TooLarge,
  OptimizerFailure,
  NotRejectedAtGammaOne,
  TooFewReplications,
  InvalidArgument,
  // data
  SchemaError,
  ParseError,
  InconsistentRow,
  IoError,
  // configuration
  ConfigError,
};

enum class ErrorCategory { Config, Data, Numerical };

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::AsymmetricInput: return "AsymmetricInput";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::Separation: return "Separation";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::PartitionFailure: return "PartitionFailure";
    case ErrorCode::MissingOutcome: return "MissingOutcome";
    case ErrorCode::LeverageOne: return "LeverageOne";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::OptimizerFailure: return "OptimizerFailure";
    case ErrorCode::NotRejectedAtGammaOne: return "NotRejectedAtGammaOne";
    case ErrorCode::TooFewReplications: return "TooFewReplications";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InconsistentRow: return "InconsistentRow";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

constexpr ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError: return ErrorCategory::Config;
    case ErrorCode::SchemaError:
    case ErrorCode::ParseError:
    case ErrorCode::InconsistentRow:
    case ErrorCode::IoError: return ErrorCategory::Data;
    default: return ErrorCategory::Numerical;
  }
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

}  // namespace psprop
