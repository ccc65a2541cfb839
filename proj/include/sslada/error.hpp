#pragma once

#include <stdexcept>
#include <string>

namespace sslada {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or dimensions that do not chain.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration value.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Operation called in the wrong state (e.g. backward twice).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or unreadable/unwritable path.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace sslada
