#pragma once

#include <stdexcept>
#include <string>

namespace avr {

/// Malformed or inconsistent input data: embedding files, manifests, model
/// files. The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged (non-finite loss or activations).
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace avr
