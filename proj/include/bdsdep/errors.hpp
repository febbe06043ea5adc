#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace bdsdep {

/// Bad input: malformed grids, out-of-range indices, unknown catalog names,
/// violated preconditions. The CLI maps these to exit code 2.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerical failure during a run. The CLI maps these to exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite state produced by a forward or backward step.
class BlowUpError : public NumericError {
public:
    BlowUpError(const std::string& what, std::size_t step)
        : NumericError(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Regression design matrix could not be solved, even with the ridge fallback.
class BasisError : public NumericError {
public:
    BasisError(const std::string& what, std::size_t step)
        : NumericError(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Per-step Picard iteration failed to reach tolerance.
class DivergenceError : public NumericError {
public:
    DivergenceError(const std::string& what, std::size_t step, std::vector<double> residuals)
        : NumericError(what + " (step " + std::to_string(step) + ")"),
          step_(step), residuals_(std::move(residuals)) {}

    std::size_t step() const noexcept { return step_; }
    const std::vector<double>& residuals() const noexcept { return residuals_; }

private:
    std::size_t step_;
    std::vector<double> residuals_;
};

/// A coefficient function returned a non-finite value at a sampled point.
class EvaluationError : public NumericError {
public:
    EvaluationError(const std::string& what, std::string witness)
        : NumericError(what + " at " + witness), witness_(std::move(witness)) {}

    const std::string& witness() const noexcept { return witness_; }

private:
    std::string witness_;
};

}  // namespace bdsdep
