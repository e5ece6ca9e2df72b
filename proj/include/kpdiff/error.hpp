#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kpdiff {

enum class ErrorCode {
  MalformedLine,
  EmptyCloud,
  DegenerateCloud,
  KTooLarge,
  NTooLarge,
  BadWeights,
  TooFewPoints,
  SizeMismatch,
  TooLargeForExact,
  NoLabels,
  NoAnnotations,
  EmptySet,
  NonPositiveSigma,
  ShapeMismatch,
  GradMismatch,
  TooFewSamples,
  NonFiniteLoss,
  InvalidConfig,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::DegenerateCloud: return "DegenerateCloud";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::NTooLarge: return "NTooLarge";
    case ErrorCode::BadWeights: return "BadWeights";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::TooLargeForExact: return "TooLargeForExact";
    case ErrorCode::NoLabels: return "NoLabels";
    case ErrorCode::NoAnnotations: return "NoAnnotations";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::NonPositiveSigma: return "NonPositiveSigma";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::GradMismatch: return "GradMismatch";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Parse failure with the offending (zero-based) row.
class MalformedLine : public Error {
 public:
  MalformedLine(std::size_t row, const std::string& what)
      : Error(ErrorCode::MalformedLine, "row " + std::to_string(row) + ": " + what), row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

}  // namespace kpdiff
