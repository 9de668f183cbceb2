#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fer {

/// Base class for every error raised by this library. Subclasses partition
/// the failure surface so callers (and the CLI exit-code mapping) can react
/// per category instead of string-matching messages.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Extent/rank/layout violations: mismatched operand shapes, invalid axes,
/// zero or negative extents.
struct ShapeError : Error {
  using Error::Error;
};

/// Malformed input data. Carries the 1-based line number of the offending
/// CSV row (0 when not line-addressable).
struct ParseError : Error {
  std::size_t line = 0;
  ParseError(const std::string& msg, std::size_t line_no)
      : Error(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

/// Empty or otherwise unusable dataset handed to the pipeline.
struct DataError : Error {
  using Error::Error;
};

/// Class label outside [0, n_classes).
struct LabelError : Error {
  using Error::Error;
};

/// Non-finite values where finite ones are required (losses, gradients,
/// monitored metrics).
struct NumericError : Error {
  using Error::Error;
};

/// Batch statistics undefined: train-mode normalization over fewer than two
/// elements per channel.
struct DegenerateBatchError : NumericError {
  using NumericError::NumericError;
};

/// An operation invoked out of order (backward without forward, ASGD average
/// requested from a non-ASGD optimizer, ...).
struct StateError : Error {
  using Error::Error;
};

/// Gradient registry does not line up with the parameter registry.
struct RegistryError : Error {
  using Error::Error;
};

/// Corrupt, truncated, or incompatible checkpoint file.
struct CheckpointError : Error {
  using Error::Error;
};

/// Invalid or contradictory configuration.
struct ConfigError : Error {
  using Error::Error;
};

/// Learning-rate schedule queried past its defined horizon.
struct ScheduleExhaustedError : Error {
  using Error::Error;
};

/// Filesystem failures while reading or writing artifacts.
struct IoError : Error {
  using Error::Error;
};

}  // namespace fer
