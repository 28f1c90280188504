#pragma once

#include <stdexcept>
#include <string>

namespace sneakdoor {

// Bad shapes, out-of-range settings, empty inputs.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or truncated tensor/manifest files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf reached a loss, gradient or parameter.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A class too small to be split stratified.
class SplitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Confusion matrix without any off-diagonal mass.
class DegeneratePairError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// No usable samples for an empirical constant.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sneakdoor
