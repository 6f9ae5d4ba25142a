#pragma once

#include <stdexcept>
#include <string>

namespace cade {

// Base of every error thrown by the library. The CLI maps subclasses onto
// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

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

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised when a metric is not defined for its input, e.g. AUC with one class.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace cade
