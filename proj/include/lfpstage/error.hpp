#pragma once

#include <stdexcept>
#include <string>

namespace lfpstage {

// Malformed or inconsistent input data (files, shapes, labels).
class data_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or other numerical breakdown during computation.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or argument outside an operation's contract.
class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace lfpstage
