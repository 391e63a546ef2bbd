#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sid {

enum class ErrorCode {
  InvalidArgument,
  // isa
  FieldOverflow,
  UnknownMode,
  ParseError,
  UndefinedLabel,
  AlignmentError,
  // simulator
  MemoryOutOfBounds,
  ScratchpadOverflow,
  ScratchpadReadBeforeWrite,
  PcOutOfRange,
  CycleBudgetExceeded,
  BufferOverflow,
  // detection
  DimensionMismatch,
  EmptySample,
  UnsupportedAlpha,
  // codegen
  CapacityExceeded,
  ExpRangeError,
  UnsupportedErrorNorm,
  // data
  MissingFile,
  MalformedRow,
  ClockMismatch,
  InsufficientData,
  // persistence
  ShapeMismatch,
  QuantizationMismatch,
  UnknownModelKind,
  CorruptFile,
  UnsupportedVersion,
  // cli
  MissingBundle,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::FieldOverflow: return "FieldOverflow";
    case ErrorCode::UnknownMode: return "UnknownMode";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UndefinedLabel: return "UndefinedLabel";
    case ErrorCode::AlignmentError: return "AlignmentError";
    case ErrorCode::MemoryOutOfBounds: return "MemoryOutOfBounds";
    case ErrorCode::ScratchpadOverflow: return "ScratchpadOverflow";
    case ErrorCode::ScratchpadReadBeforeWrite: return "ScratchpadReadBeforeWrite";
    case ErrorCode::PcOutOfRange: return "PcOutOfRange";
    case ErrorCode::CycleBudgetExceeded: return "CycleBudgetExceeded";
    case ErrorCode::BufferOverflow: return "BufferOverflow";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::UnsupportedAlpha: return "UnsupportedAlpha";
    case ErrorCode::CapacityExceeded: return "CapacityExceeded";
    case ErrorCode::ExpRangeError: return "ExpRangeError";
    case ErrorCode::UnsupportedErrorNorm: return "UnsupportedErrorNorm";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::ClockMismatch: return "ClockMismatch";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::QuantizationMismatch: return "QuantizationMismatch";
    case ErrorCode::UnknownModelKind: return "UnknownModelKind";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::MissingBundle: return "MissingBundle";
  }
  return "Unknown";
}

/// Coarse grouping used for CLI exit codes.
enum class ErrorCategory { Validation, Capacity, Dataset };

constexpr ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::CapacityExceeded:
    case ErrorCode::ScratchpadOverflow:
    case ErrorCode::BufferOverflow:
    case ErrorCode::MemoryOutOfBounds:
      return ErrorCategory::Capacity;
    case ErrorCode::MissingFile:
    case ErrorCode::MalformedRow:
    case ErrorCode::ClockMismatch:
    case ErrorCode::InsufficientData:
      return ErrorCategory::Dataset;
    default:
      return ErrorCategory::Validation;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Program counter of the failing instruction, when raised by the simulator.
  std::optional<std::uint32_t> pc;
  /// Index of the failing instruction among retired instructions of the run.
  std::optional<std::uint64_t> instruction_index;

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace sid
