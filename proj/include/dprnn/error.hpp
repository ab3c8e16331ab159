// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

#pragma once

#include <stdexcept>
#include <string>

namespace dprnn {

/// Base class for all errors raised by the engine.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Shape or dimension disagreement between operands.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(what) {}
};

/// Input violates a documented value constraint (e.g. box coordinates
/// outside [0,1], empty token sequence).
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(what) {}
};

/// API contract violation (e.g. backward from a non-scalar root).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(what) {}
};

/// Softmax over a fully masked support.
class EmptySupportError : public Error {
 public:
  explicit EmptySupportError(const std::string& what) : Error(what) {}
};

/// What went wrong while reading an on-disk artifact.
enum class FormatFault {
  bad_magic,
  bad_version,
  truncated,
  value_out_of_range,
  malformed,
};

/// Typed load/save error for feature files, checkpoints and manifests.
class FormatError : public Error {
 public:
  FormatError(FormatFault fault, const std::string& what)
      : Error(what), fault_(fault) {}
  FormatFault fault() const { return fault_; }

 private:
  FormatFault fault_;
};

/// Training aborted because the loss became non-finite.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error(what) {}
};

}  // namespace dprnn
