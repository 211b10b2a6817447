#pragma once

#include <stdexcept>
#include <string>

namespace recgen {

// Base for every error raised by the library. The subclasses map onto the
// CLI exit codes, so callers can tell bad configuration, bad data and
// numerical failure apart without parsing messages.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent or invalid configuration (shapes, hyper-parameters, flags).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed, missing or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// A loss or activation became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace recgen
