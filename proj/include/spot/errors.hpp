#pragma once

#include <stdexcept>
#include <string>

namespace spot {

// Malformed or mismatched input data (files, shapes, dataset contents).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A computation produced a non-finite value or otherwise diverged.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace spot
