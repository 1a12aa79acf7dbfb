#pragma once

#include <stdexcept>
#include <string>

namespace lwbc {

/// Operand shapes do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Index outside its valid range (class labels, sample indices).
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// An input violated a documented precondition.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lwbc
