// Shared error types and small numeric helpers.
#pragma once

#include <stdexcept>
#include <string>

namespace gtfnmf {

// Invalid parameter value (lengthscale <= 0, frequency out of range, ...).
struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Structurally inconsistent configuration (empty model, layout mismatch, ...).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Numerical failure: non-Hurwitz feedback matrix, singular innovation,
// indefinite site, Riccati non-convergence.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Inference produced a non-finite state.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or unsupported file contents.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input data unusable for the requested task (silent signal, empty mask).
struct DegenerateInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace gtfnmf
