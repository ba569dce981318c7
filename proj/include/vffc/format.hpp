#pragma once

#include <charconv>
#include <string>

namespace vffc {

/// Shortest decimal string that round-trips the double exactly (config files,
/// resolved-run records).
inline std::string format_shortest(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace vffc
