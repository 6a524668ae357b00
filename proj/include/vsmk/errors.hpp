#pragma once

#include <stdexcept>
#include <string>

namespace vsmk {

// Shape or rank mismatch between tensor operands.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed configuration: unknown key, unparseable value, inconsistent combination.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data: bad manifest row, unreadable image, label out of range.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure during optimization (e.g. NaN gradient).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vsmk
