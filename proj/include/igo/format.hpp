#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <system_error>

namespace igo
{

/// Shortest decimal string that parses back to the same double; "inf", "-inf", "nan" otherwise.
inline std::string format_double(double value)
{
    if (std::isnan(value))
    {
        return "nan";
    }
    if (std::isinf(value))
    {
        return value > 0 ? "inf" : "-inf";
    }
    char buf[64];
    const auto result = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, result.ptr);
}

} // namespace igo
