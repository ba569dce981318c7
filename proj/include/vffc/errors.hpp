#pragma once

#include <stdexcept>
#include <string>

namespace vffc {

/// Malformed or inconsistent input data (files, formats, dimensions).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric contract violation (NaN/Inf, degenerate normalization, domain errors).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vffc
