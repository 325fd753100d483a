#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <string>
#include <string_view>

namespace ldosim {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

namespace detail {

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(a[i])) !=
            std::tolower(static_cast<unsigned char>(b[i]))) return false;
    }
    return true;
}

} // namespace detail

/// Shortest round-trip decimal form of a double. Used everywhere a number
/// is printed (netlists, CSV) so that identical runs are byte-identical
/// and parse(print(x)) == x exactly.
inline std::string fmt_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double db20(double magnitude) { return 20.0 * std::log10(magnitude); }
inline double from_db20(double db) { return std::pow(10.0, db / 20.0); }

} // namespace ldosim
