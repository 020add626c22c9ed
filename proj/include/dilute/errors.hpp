#pragma once

#include <stdexcept>
#include <string>

namespace dilute {

/// Bad input: malformed config, violated precondition, inconsistent scales.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A computation ran but could not deliver a trustworthy number.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ResolutionError : NumericalError {
    using NumericalError::NumericalError;
};

struct BracketError : NumericalError {
    using NumericalError::NumericalError;
};

struct BudgetError : NumericalError {
    using NumericalError::NumericalError;
};

struct ConvergenceError : NumericalError {
    using NumericalError::NumericalError;
};

/// Input violates a modelling assumption (e.g. an effectively attractive potential).
struct ModelError : NumericalError {
    using NumericalError::NumericalError;
};

}  // namespace dilute
