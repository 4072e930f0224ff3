#pragma once

#include <stdexcept>
#include <string>

namespace bsdiff {

/// Bad caller input: shapes, ranges, malformed configs. Maps to CLI exit code 2.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Regression with fewer samples than basis functions.
class UnderdeterminedRegression : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// A computation produced non-finite values or failed to converge. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDivergence : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// An experiment ran but its built-in check did not hold.
class ValidationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace detail
}  // namespace bsdiff
