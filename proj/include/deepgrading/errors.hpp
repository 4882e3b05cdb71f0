#pragma once

#include <stdexcept>
#include <string>

namespace dg {

// The three failure families map onto CLI exit codes 2, 3 and 4.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dg
