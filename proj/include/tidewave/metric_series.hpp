#pragma once

// Uniform-grid multi-channel power series shared by the simulator, the
// ingest pipeline and the feature builder.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "csv.hpp"
#include "error.hpp"

namespace tidewave {

enum class Metric { Rsrp, Rssi, Rsrq };
enum class Domain { Db, Linear };

inline constexpr Metric kAllMetrics[] = {Metric::Rsrp, Metric::Rssi, Metric::Rsrq};

inline std::string_view metric_name(Metric m)
{
    switch (m) {
    case Metric::Rsrp: return "rsrp";
    case Metric::Rssi: return "rssi";
    case Metric::Rsrq: return "rsrq";
    }
    return "?";
}

/// Unit suffix used in CSV column names (RSRQ is a ratio, the others absolute power).
inline std::string_view metric_unit(Metric m)
{
    return m == Metric::Rsrq ? "db" : "dbm";
}

inline double db_to_linear(double x)
{
    return std::pow(10.0, x / 10.0);
}

inline double linear_to_db(double x)
{
    return 10.0 * std::log10(x);
}

struct ChannelKey {
    Metric metric = Metric::Rsrp;
    std::size_t antenna = 0;

    auto operator<=>(const ChannelKey&) const = default;
};

/// One metric of one antenna; masked samples hold NaN, so the validity mask
/// and finiteness agree by construction.
struct Channel {
    std::vector<double> values;

    bool valid(std::size_t i) const { return std::isfinite(values[i]); }

    std::size_t valid_count() const
    {
        std::size_t n = 0;
        for (double v : values) {
            n += std::isfinite(v) ? 1 : 0;
        }
        return n;
    }
};

struct MetricSeries {
    std::string cell_id;
    std::vector<double> times; ///< uniform grid, seconds since epoch
    double dt = 0.0;
    Domain domain = Domain::Db;
    std::map<ChannelKey, Channel> channels;

    std::size_t size() const { return times.size(); }

    std::size_t antenna_count() const
    {
        std::size_t k = 0;
        for (const auto& [key, ch] : channels) {
            k = std::max(k, key.antenna + 1);
        }
        return k;
    }

    const Channel& channel(Metric m, std::size_t antenna) const
    {
        const auto it = channels.find({m, antenna});
        if (it == channels.end()) {
            throw ValidationError("series '" + cell_id + "' has no " + std::string(metric_name(m)) +
                                  " channel for antenna " + std::to_string(antenna));
        }
        return it->second;
    }

    Channel& channel(Metric m, std::size_t antenna) { return channels[{m, antenna}]; }

    void validate() const
    {
        if (times.size() >= 2) {
            if (!(dt > 0.0)) {
                throw ValidationError("series grid step must be positive");
            }
            for (std::size_t i = 1; i < times.size(); ++i) {
                const double step = times[i] - times[i - 1];
                if (std::abs(step - dt) > 1e-6 * dt) {
                    throw ValidationError("series grid is not uniform at sample " + std::to_string(i));
                }
            }
        }
        for (const auto& [key, ch] : channels) {
            if (ch.values.size() != times.size()) {
                throw ValidationError("channel length does not match the time grid");
            }
        }
    }

    /// Fraction of masked samples over all channels.
    double masked_fraction() const
    {
        std::size_t total = 0;
        std::size_t masked = 0;
        for (const auto& [key, ch] : channels) {
            total += ch.values.size();
            masked += ch.values.size() - ch.valid_count();
        }
        return total == 0 ? 0.0 : static_cast<double>(masked) / static_cast<double>(total);
    }

    MetricSeries converted(Domain target) const
    {
        MetricSeries out = *this;
        if (target == domain) {
            return out;
        }
        for (auto& [key, ch] : out.channels) {
            for (double& v : ch.values) {
                if (std::isfinite(v)) {
                    v = target == Domain::Linear ? db_to_linear(v) : linear_to_db(v);
                }
            }
        }
        out.domain = target;
        return out;
    }
};

inline std::string series_column_name(const std::string& cell, const ChannelKey& key)
{
    return cell + "_ant" + std::to_string(key.antenna) + "_" + std::string(metric_name(key.metric)) + "_" +
           std::string(metric_unit(key.metric));
}

/// Writes `t_unix_s` plus one column per channel (metric-major, antenna-minor), dB units.
/// Masked samples are written as empty fields.
inline void write_series_csv(std::ostream& out, const MetricSeries& series)
{
    const MetricSeries db = series.converted(Domain::Db);
    std::vector<std::string> header{"t_unix_s"};
    for (const auto& [key, ch] : db.channels) {
        header.push_back(series_column_name(db.cell_id, key));
    }
    csv::write_row(out, header);
    std::vector<std::string> row;
    for (std::size_t i = 0; i < db.size(); ++i) {
        row.clear();
        row.push_back(csv::format_double(db.times[i]));
        for (const auto& [key, ch] : db.channels) {
            row.push_back(ch.valid(i) ? csv::format_double(ch.values[i]) : std::string());
        }
        csv::write_row(out, row);
    }
}

namespace detail {

inline bool parse_series_column(const std::string& name, std::string& cell, ChannelKey& key)
{
    for (Metric m : kAllMetrics) {
        const std::string suffix = "_" + std::string(metric_name(m)) + "_" + std::string(metric_unit(m));
        if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
            continue;
        }
        const std::string head = name.substr(0, name.size() - suffix.size());
        const auto pos = head.rfind("_ant");
        if (pos == std::string::npos || pos + 4 >= head.size()) {
            return false;
        }
        const std::string digits = head.substr(pos + 4);
        if (digits.find_first_not_of("0123456789") != std::string::npos) {
            return false;
        }
        cell = head.substr(0, pos);
        key = {m, static_cast<std::size_t>(std::stoul(digits))};
        return true;
    }
    return false;
}

} // namespace detail

/// Reads a file produced by write_series_csv; the result is in dB domain.
inline MetricSeries read_series_csv(std::istream& in)
{
    const csv::Table table = csv::read(in);
    if (table.header.empty() || table.header[0] != "t_unix_s") {
        throw ValidationError("series csv: first column must be t_unix_s");
    }
    MetricSeries s;
    std::vector<ChannelKey> keys;
    for (std::size_t c = 1; c < table.header.size(); ++c) {
        std::string cell;
        ChannelKey key;
        if (!detail::parse_series_column(table.header[c], cell, key)) {
            throw ValidationError("series csv: unrecognised column '" + table.header[c] + "'");
        }
        if (c == 1) {
            s.cell_id = cell;
        } else if (cell != s.cell_id) {
            throw ValidationError("series csv: mixed cell ids in one file");
        }
        keys.push_back(key);
        s.channels[key].values.reserve(table.rows.size());
    }
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (row.size() != table.header.size()) {
            throw ValidationError("series csv: wrong column count at line " + std::to_string(table.line_numbers[r]));
        }
        const auto t = csv::parse_double(row[0]);
        if (!t) {
            throw ValidationError("series csv: bad timestamp at line " + std::to_string(table.line_numbers[r]));
        }
        s.times.push_back(*t);
        for (std::size_t c = 1; c < row.size(); ++c) {
            const auto v = csv::parse_double(row[c]);
            s.channels[keys[c - 1]].values.push_back(v ? *v : std::numeric_limits<double>::quiet_NaN());
        }
    }
    s.dt = s.times.size() >= 2 ? (s.times.back() - s.times.front()) / static_cast<double>(s.times.size() - 1) : 0.0;
    s.domain = Domain::Db;
    s.validate();
    return s;
}

} // namespace tidewave
