#pragma once

#include <stdexcept>
#include <string>

namespace pathcons {

// Invalid shapes, incompatible operands, malformed configs. CLI exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// NaN/Inf values or diverging training. CLI exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// API misuse: non-scalar loss node, missing checkpoint, empty plot input.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pathcons
