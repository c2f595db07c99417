#pragma once

#include <stdexcept>
#include <string>

namespace refi {

// Bad input: malformed files, shape mismatches, invalid configuration.
// The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or other numeric failures mid-computation.
// The CLI maps these (and any other runtime error) to exit code 2.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace refi
