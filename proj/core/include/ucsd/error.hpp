#pragma once

#include <stdexcept>
#include <string>

namespace ucsd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or configuration dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf in a forward or backward pass, or a diverging chain.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad user input: out-of-range options, malformed configs.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Missing files, corrupt headers, checksum or magic mismatches.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ucsd
