#pragma once

#include <stdexcept>
#include <string>

namespace dkcnet {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument is outside its valid domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// An object is used before it reached the required state.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Configuration is inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data cannot be processed (entirely black image, malformed row, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A metric has no defined value for the given input (e.g. AUC with one class).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dkcnet
