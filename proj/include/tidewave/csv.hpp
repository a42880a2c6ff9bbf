#pragma once

// Minimal CSV reading/writing: comma separated, header row, LF endings.
// Doubles are written in shortest round-trip form so files are byte-stable.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "error.hpp"

namespace tidewave::csv {

inline std::string format_double(double v)
{
    if (std::isnan(v)) {
        return "nan";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    if (s.empty()) {
        return std::nullopt;
    }
    if (s.front() == '+') {
        s.remove_prefix(1);
    }
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        return std::nullopt;
    }
    return v;
}

inline std::vector<std::string> split(std::string_view line, char delim = ',')
{
    if (!line.empty() && line.back() == '\r') {
        line.remove_suffix(1);
    }
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            break;
        }
        out.emplace_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers; ///< 1-based source line of each row

    std::optional<std::size_t> column(std::string_view name) const
    {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) {
                return i;
            }
        }
        return std::nullopt;
    }
};

/// Reads a whole table; rows with a wrong field count are kept verbatim so
/// callers can report them with their line number.
inline Table read(std::istream& in)
{
    Table t;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!have_header) {
            if (line.empty() || line == "\r") {
                throw ValidationError("csv: missing header row");
            }
            t.header = split(line);
            have_header = true;
            continue;
        }
        if (line.empty() || line == "\r") {
            continue;
        }
        t.rows.push_back(split(line));
        t.line_numbers.push_back(lineno);
    }
    if (!have_header) {
        throw ValidationError("csv: missing header row");
    }
    return t;
}

inline std::ifstream open_for_read(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    return in;
}

inline Table read_file(const std::string& path)
{
    auto in = open_for_read(path);
    return read(in);
}

inline void write_row(std::ostream& out, const std::vector<std::string>& fields)
{
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i != 0) {
            out << ',';
        }
        out << fields[i];
    }
    out << '\n';
}

inline std::ofstream open_for_write(const std::string& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    return out;
}

} // namespace tidewave::csv
