#pragma once

#include <stdexcept>
#include <string>

namespace pcdm {

/// Base of every fault raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or resolutions that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or config keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API called in a state or with arguments it does not support.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Optimizer state inconsistent with the parameters it tracks.
class StateError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Division by a vanishing schedule coefficient.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Malformed input files (PNG, CSV, checkpoint).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or matrices outside their required class (e.g. indefinite covariance).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace pcdm
