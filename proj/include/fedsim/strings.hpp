#pragma once

#include <charconv>
#include <string>
#include <system_error>

namespace fedsim {

// Shortest decimal string that round-trips the double exactly.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    std::from_chars(s.data(), s.data() + s.size(), v);
    return v;
}

// RFC-4180 style quoting: wrap in quotes when the cell contains a comma or a
// quote; embedded quotes are doubled.
inline std::string csv_escape(const std::string& cell) {
    if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace fedsim
