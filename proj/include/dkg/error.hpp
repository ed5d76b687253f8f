// SPDX-License-Identifier: Apache-2.0
#ifndef DKG_ERROR_HPP
#define DKG_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace dkg {

enum class ErrorKind {
  // data
  MissingFile,
  MissingColumn,
  NonNumericCell,
  EmptyAfterCleaning,
  LabelOutOfRange,
  UnknownFactor,
  EmptyGroup,
  TooFewRows,
  InvalidConfig,
  // models / training
  InvalidSpec,
  DimensionMismatch,
  NonFiniteLoss,
  NonFiniteGradient,
  EmptySplit,
  // attribution / knowledge
  TooManyFactors,
  OracleFailure,
  EmptySourceSet,
  InvalidK,
  FactorMismatch,
  // eval
  EmptyCounts,
  LengthMismatch,
  NotAPermutation,
  EmptyInput,
  // persistence
  IoError,
  SchemaVersionMismatch,
  CorruptArtifact,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::NonNumericCell: return "NonNumericCell";
    case ErrorKind::EmptyAfterCleaning: return "EmptyAfterCleaning";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::UnknownFactor: return "UnknownFactor";
    case ErrorKind::EmptyGroup: return "EmptyGroup";
    case ErrorKind::TooFewRows: return "TooFewRows";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::TooManyFactors: return "TooManyFactors";
    case ErrorKind::OracleFailure: return "OracleFailure";
    case ErrorKind::EmptySourceSet: return "EmptySourceSet";
    case ErrorKind::InvalidK: return "InvalidK";
    case ErrorKind::FactorMismatch: return "FactorMismatch";
    case ErrorKind::EmptyCounts: return "EmptyCounts";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::NotAPermutation: return "NotAPermutation";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorKind::CorruptArtifact: return "CorruptArtifact";
  }
  return "Unknown";
}

// Every failure raised by the library carries a machine-readable kind; the
// message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind,
                    const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace dkg

#endif  // DKG_ERROR_HPP
