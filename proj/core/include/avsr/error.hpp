#pragma once

#include <stdexcept>
#include <string>

namespace avsr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or sizes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf reached an op boundary, or a quantity is out of its domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value. The message starts with the field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Failure reading or writing an on-disk artifact.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace avsr
