#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace stepsnet {

// Shape/extent disagreement between operands.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A channel partition does not add up (split sizes vs. width).
class PartitionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// An operation was called outside its contract (e.g. backward on a non-scalar).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Invalid configuration: bad field values, broken invariants, unknown keys.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numeric failure: NaN/Inf produced, zero-variance degeneracy, divergence.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Checkpoint file problems: bad magic, width mismatch, missing parameters.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

}  // namespace stepsnet
