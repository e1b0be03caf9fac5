#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace posesynth {

enum class ErrorCode {
  DegenerateRotation,
  InvalidRotation,
  InsufficientKeyposes,
  ParseError,
  EmptyDataset,
  ChannelError,
  UnknownSequence,
  EmptySplit,
  ConfigError,
  ShapeError,
  DivergenceError,
  CheckpointError,
  AlignmentError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateRotation: return "DegenerateRotation";
    case ErrorCode::InvalidRotation: return "InvalidRotation";
    case ErrorCode::InsufficientKeyposes: return "InsufficientKeyposes";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::ChannelError: return "ChannelError";
    case ErrorCode::UnknownSequence: return "UnknownSequence";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::DivergenceError: return "DivergenceError";
    case ErrorCode::CheckpointError: return "CheckpointError";
    case ErrorCode::AlignmentError: return "AlignmentError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure surfaced by the library carries one of the codes above so the
/// CLI and the HTTP service can map it to a machine-readable payload.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace posesynth
