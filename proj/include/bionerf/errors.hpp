// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace bionerf {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  ok = 0,
  internal = 1,
  usage = 2,
  data = 3,
  numeric = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::internal)
      : std::runtime_error(what), code_(code) {}

  ExitCode exit_code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Shape errors from the tensor ops. These indicate a wiring bug, not bad data.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error("dimension error: " + what) {}
};

class StaleGraphError : public Error {
 public:
  explicit StaleGraphError(const std::string& what) : Error("stale graph: " + what) {}
};

class NumericInputError : public Error {
 public:
  explicit NumericInputError(const std::string& what)
      : Error("non-finite input: " + what, ExitCode::numeric) {}
};

class StateShapeError : public Error {
 public:
  explicit StateShapeError(const std::string& what) : Error("memory state shape: " + what) {}
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what) : Error("precondition: " + what) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& what) : Error("index out of range: " + what) {}
};

class OptimizerError : public Error {
 public:
  explicit OptimizerError(const std::string& what) : Error("optimizer: " + what) {}
};

/// Training produced a non-finite loss.
class NumericFailure : public Error {
 public:
  explicit NumericFailure(const std::string& what) : Error(what, ExitCode::numeric) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config: " + what, ExitCode::usage) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io: " + what, ExitCode::data) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format: " + what, ExitCode::data) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error("validation: " + what, ExitCode::data) {}
};

class SpecError : public Error {
 public:
  explicit SpecError(const std::string& what) : Error("scene spec: " + what, ExitCode::usage) {}
};

}  // namespace bionerf
