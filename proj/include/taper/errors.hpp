#pragma once

#include <stdexcept>
#include <string>

namespace taper {

// Shape mismatches between operands (matmul inner dims, vector lengths, ...).
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Bad user-supplied data: out-of-vocab ids, labels out of range, malformed files.
struct InputError : std::runtime_error {
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Bad configuration: invalid hyperparameters, unknown presets, format mismatches.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Numeric breakdown: NaN/Inf produced where finiteness is guaranteed.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace taper
