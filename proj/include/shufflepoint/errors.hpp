// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#pragma once

#include <stdexcept>
#include <string>

namespace shufflepoint {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A requested count is larger than what the input can provide.
class CardinalityError : public Error {
 public:
  using Error::Error;
};

/// Empty input where at least one row is required.
class EmptyInputError : public Error {
 public:
  using Error::Error;
};

/// Class label outside [0, num_classes).
class LabelError : public Error {
 public:
  using Error::Error;
};

/// API misuse: non-scalar loss, second backward, empty estimate list...
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration key/value, missing file, infeasible request.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated data file.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace shufflepoint
