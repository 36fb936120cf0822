#pragma once

#include <stdexcept>
#include <string>

namespace ingvio {

/// Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing, malformed or unsorted dataset input (CLI exit code 3).
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical breakdown such as a singular innovation covariance or a covariance
/// that lost positive semi-definiteness (CLI exit code 4).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ingvio
