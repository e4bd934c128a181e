#pragma once

#include <stdexcept>
#include <string>

namespace amda {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor/matrix shapes. The message names both shapes.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// Invalid configuration value (hyperparameter out of range, bad file key, ...).
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Structurally valid input that the operation cannot act on
/// (all-false mask, zero-norm vector, empty batch, ...).
class DegenerateInputError : public Error {
public:
  using Error::Error;
};

/// Attempt to read data that the requested access mode withholds.
class AccessViolationError : public Error {
public:
  using Error::Error;
};

/// Malformed on-disk data. The message carries the offending location.
class FormatError : public Error {
public:
  using Error::Error;
};

/// Non-finite value produced where the numeric contract forbids it.
class NumericError : public Error {
public:
  using Error::Error;
};

/// Filesystem failure, message carries the path.
class IoError : public Error {
public:
  using Error::Error;
};

} // namespace amda
