#pragma once

#include <stdexcept>
#include <string>

namespace chg2cap {

// Error families map onto CLI exit codes: ConfigError -> 2, DataError -> 3,
// NumericError -> 4. DimensionError and ContractError are programming errors
// raised by the numeric engine.

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

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

}  // namespace chg2cap
