#pragma once

#include <stdexcept>
#include <string>

namespace al {

// Error taxonomy shared by every module. Callers that only care about
// "something went wrong" can catch al::Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes; the message names the offending dims.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A numeric or enum parameter outside its documented range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Input data that cannot be processed (too short, malformed file, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Semantically invalid values, e.g. label rows that do not sum to one.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered during training or quantization.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace al
