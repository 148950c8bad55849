#pragma once

#include <stdexcept>
#include <string>

namespace hopmeta {

//! Bad input: malformed config, violated precondition, inconsistent sets.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

//! A numerical procedure failed (non-convergence, degenerate eigen-data, budget).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

//! A modelling assumption does not hold for the given instance
//! (saddle on the domain boundary, no deeper minimum, ...).
class AssumptionFailure : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace hopmeta
