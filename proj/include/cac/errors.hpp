// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cac {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or module configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data, e.g. labels out of range.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ScheduleError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cac
