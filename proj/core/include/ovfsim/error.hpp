// Copyright 2026 The ovfsim Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ovfsim {

/// Base class of every error thrown by ovfsim.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value is outside its documented domain (label range, config field, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An API precondition on call order or graph structure was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or format problems.
class IoError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public IoError {
 public:
  using IoError::IoError;
};

class TruncatedError : public IoError {
 public:
  using IoError::IoError;
};

class CountMismatchError : public IoError {
 public:
  using IoError::IoError;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public IoError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : IoError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Bad invocation: malformed config, missing input file, conflicting flags.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Training produced a NaN/Inf loss.
class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

}  // namespace ovfsim
