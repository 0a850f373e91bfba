#pragma once

#include <stdexcept>
#include <string>

namespace ldsa {

// Shape or dimension disagreement between tensor operands.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Caller broke an API precondition (unavailable action, step after terminal, ...).
struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// Exhaustive search would exceed the configured budget.
struct BudgetError : std::runtime_error {
    explicit BudgetError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a training step produces a non-finite loss or gradient.
struct TrainingAbort : std::runtime_error {
    explicit TrainingAbort(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ldsa
