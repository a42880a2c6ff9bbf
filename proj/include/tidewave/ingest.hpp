#pragma once

// Raw metric log ingestion: parse, validate, clean and resample onto a
// uniform grid. Fixed stage order:
//   drop_invalid -> dB to linear -> iqr_mask -> hampel_filter -> resample_uniform [-> lowpass]
// Cleaning happens in the linear domain; every stage is a pure transform.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "metric_series.hpp"
#include "stats.hpp"

namespace tidewave::ingest {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct MetricRecord {
    double timestamp = 0.0; ///< s since epoch
    std::string cell_id;
    std::size_t antenna = 0;
    double rsrp = 0.0; ///< dBm
    double rssi = 0.0; ///< dBm
    double rsrq = 0.0; ///< dB

    double metric(Metric m) const
    {
        switch (m) {
        case Metric::Rsrp: return rsrp;
        case Metric::Rssi: return rssi;
        case Metric::Rsrq: return rsrq;
        }
        return kNaN;
    }
};

/// Column layout of the raw log.
struct RecordFormat {
    std::vector<std::string> columns{"t_unix_s", "cell_id", "antenna", "rsrp_dbm", "rssi_dbm", "rsrq_db"};
    std::size_t antenna_count = 64; ///< antenna indices must be below this
};

struct ParseIssue {
    std::size_t line = 0;
    std::string message;
};

struct ParseResult {
    std::vector<MetricRecord> records;
    std::vector<ParseIssue> issues; ///< malformed rows, never silently dropped
};

/// Parses a raw log. A bad header throws; bad rows are reported with their line number.
inline ParseResult parse_records(std::istream& in, const RecordFormat& fmt = {})
{
    csv::Table table;
    try {
        table = csv::read(in);
    } catch (const ValidationError&) {
        throw ValidationError("line 1: unreadable header");
    }
    if (table.header != fmt.columns) {
        std::string expected;
        for (const auto& c : fmt.columns) {
            expected += (expected.empty() ? "" : ",") + c;
        }
        throw ValidationError("line 1: unexpected header, expected '" + expected + "'");
    }
    ParseResult out;
    out.records.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t line = table.line_numbers[r];
        if (row.size() != fmt.columns.size()) {
            out.issues.push_back({line, "expected " + std::to_string(fmt.columns.size()) + " fields, got " +
                                            std::to_string(row.size())});
            continue;
        }
        const auto t = csv::parse_double(row[0]);
        const auto ant = csv::parse_double(row[2]);
        const auto rsrp = csv::parse_double(row[3]);
        const auto rssi = csv::parse_double(row[4]);
        const auto rsrq = csv::parse_double(row[5]);
        if (!t || !std::isfinite(*t)) {
            out.issues.push_back({line, "non-numeric timestamp"});
            continue;
        }
        if (!ant || *ant < 0 || *ant != std::floor(*ant) || *ant >= static_cast<double>(fmt.antenna_count)) {
            out.issues.push_back({line, "invalid antenna index"});
            continue;
        }
        if (!rsrp || !rssi || !rsrq) {
            out.issues.push_back({line, !rsrp ? "non-numeric rsrp" : (!rssi ? "non-numeric rssi" : "non-numeric rsrq")});
            continue;
        }
        out.records.push_back({*t, row[1], static_cast<std::size_t>(*ant), *rsrp, *rssi, *rsrq});
    }
    return out;
}

inline void write_records_csv(std::ostream& out, std::span<const MetricRecord> records)
{
    csv::write_row(out, RecordFormat{}.columns);
    for (const auto& r : records) {
        csv::write_row(out, {csv::format_double(r.timestamp), r.cell_id, std::to_string(r.antenna),
                             csv::format_double(r.rsrp), csv::format_double(r.rssi), csv::format_double(r.rsrq)});
    }
}

/// One record per antenna per timestamp, in time order (dB domain).
inline std::vector<MetricRecord> series_to_records(const MetricSeries& series)
{
    const MetricSeries db = series.converted(Domain::Db);
    std::vector<MetricRecord> out;
    const std::size_t k = db.antenna_count();
    out.reserve(db.size() * k);
    for (std::size_t i = 0; i < db.size(); ++i) {
        for (std::size_t a = 0; a < k; ++a) {
            out.push_back({db.times[i], db.cell_id, a, db.channel(Metric::Rsrp, a).values[i],
                           db.channel(Metric::Rssi, a).values[i], db.channel(Metric::Rsrq, a).values[i]});
        }
    }
    return out;
}

/// Discards records where any metric is exactly zero (the decoder's "no value").
inline std::vector<MetricRecord> drop_invalid(std::vector<MetricRecord> records)
{
    std::erase_if(records, [](const MetricRecord& r) { return r.rsrp == 0.0 || r.rssi == 0.0 || r.rsrq == 0.0; });
    return records;
}

struct IqrResult {
    std::vector<bool> keep;    ///< false = outside the fences (or non-finite)
    bool insufficient = false; ///< fewer than 4 finite values; everything finite kept
    double lower_fence = kNaN;
    double upper_fence = kNaN;
};

/// Tukey fences Q1 - k IQR, Q3 + k IQR with linearly interpolated quartiles over finite values.
inline IqrResult iqr_mask(std::span<const double> values, double k = 1.0)
{
    IqrResult res;
    res.keep.resize(values.size());
    std::vector<double> finite;
    finite.reserve(values.size());
    for (double v : values) {
        if (std::isfinite(v)) {
            finite.push_back(v);
        }
    }
    if (finite.size() < 4) {
        res.insufficient = true;
        for (std::size_t i = 0; i < values.size(); ++i) {
            res.keep[i] = std::isfinite(values[i]);
        }
        return res;
    }
    std::sort(finite.begin(), finite.end());
    const double q1 = stats::quantile_sorted(finite, 0.25);
    const double q3 = stats::quantile_sorted(finite, 0.75);
    const double iqr = q3 - q1;
    res.lower_fence = q1 - k * iqr;
    res.upper_fence = q3 + k * iqr;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = values[i];
        res.keep[i] = std::isfinite(v) && v >= res.lower_fence && v <= res.upper_fence;
    }
    return res;
}

inline constexpr double kMadToSigma = 1.4826;

/// Hampel identifier over the finite samples (NaN entries are skipped and left as is).
/// A sample is replaced by its window median when it deviates by more than
/// n_mad * 1.4826 * MAD; windows are truncated at the edges.
inline std::vector<double> hampel_filter(std::span<const double> values, std::size_t window_half = 5,
                                         double n_mad = 3.0, std::size_t* replaced = nullptr)
{
    if (window_half < 1) {
        throw ValidationError("hampel window half-width must be at least 1");
    }
    std::vector<double> out(values.begin(), values.end());
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (std::isfinite(values[i])) {
            idx.push_back(i);
        }
    }
    std::size_t count = 0;
    if (std::isinf(n_mad)) {
        if (replaced) {
            *replaced = 0;
        }
        return out;
    }
    std::vector<double> window;
    const std::size_t n = idx.size();
    for (std::size_t p = 0; p < n; ++p) {
        const std::size_t lo = p >= window_half ? p - window_half : 0;
        const std::size_t hi = std::min(n - 1, p + window_half);
        window.clear();
        for (std::size_t q = lo; q <= hi; ++q) {
            window.push_back(values[idx[q]]);
        }
        const double med = stats::median_inplace(window);
        const double spread = stats::mad(window, med);
        const double x = values[idx[p]];
        if (std::abs(x - med) > n_mad * kMadToSigma * spread) {
            out[idx[p]] = med;
            ++count;
        }
    }
    if (replaced) {
        *replaced = count;
    }
    return out;
}

/// Time-ordered samples of one channel before resampling; NaN marks a masked sample.
struct IrregularChannel {
    std::vector<double> times;
    std::vector<double> values;
};

struct CellLog {
    std::string cell_id;
    std::map<ChannelKey, IrregularChannel> channels;
};

/// Splits records by cell (in order of first appearance) and by (metric, antenna).
inline std::vector<CellLog> group_by_cell(std::span<const MetricRecord> records)
{
    std::vector<CellLog> cells;
    std::map<std::string, std::size_t> index;
    for (const auto& r : records) {
        auto [it, inserted] = index.try_emplace(r.cell_id, cells.size());
        if (inserted) {
            cells.push_back({r.cell_id, {}});
        }
        CellLog& cell = cells[it->second];
        for (Metric m : kAllMetrics) {
            auto& ch = cell.channels[{m, r.antenna}];
            ch.times.push_back(r.timestamp);
            ch.values.push_back(r.metric(m));
        }
    }
    for (auto& cell : cells) {
        for (auto& [key, ch] : cell.channels) {
            std::vector<std::size_t> order(ch.times.size());
            for (std::size_t i = 0; i < order.size(); ++i) {
                order[i] = i;
            }
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return ch.times[a] < ch.times[b]; });
            IrregularChannel sorted;
            for (std::size_t i : order) {
                sorted.times.push_back(ch.times[i]);
                sorted.values.push_back(ch.values[i]);
            }
            ch = std::move(sorted);
        }
    }
    return cells;
}

/// Multiples of dt inside [first, last].
inline std::vector<double> aligned_grid(double first, double last, double dt)
{
    if (!(dt > 0.0)) {
        throw ValidationError("resampling step must be positive");
    }
    const double k0 = std::ceil(first / dt - 1e-9);
    const double k1 = std::floor(last / dt + 1e-9);
    std::vector<double> grid;
    for (double k = k0; k <= k1; k += 1.0) {
        grid.push_back(k * dt);
    }
    return grid;
}

/// Bin-averages the finite samples (bins of width dt centred on grid points, node at
/// the mean sample time), then linearly interpolates the nodes onto `grid`. Grid points
/// whose surrounding raw samples are more than `max_gap` apart are masked.
inline std::vector<double> resample_channel(const IrregularChannel& ch, std::span<const double> grid, double dt,
                                            double max_gap)
{
    std::vector<double> out(grid.size(), kNaN);
    std::vector<double> raw_t;
    std::vector<double> node_t;
    std::vector<double> node_v;
    if (grid.empty()) {
        return out;
    }
    const double origin = grid.front();
    long long current_bin = 0;
    double sum_t = 0.0;
    double sum_v = 0.0;
    std::size_t count = 0;
    auto flush = [&] {
        if (count > 0) {
            node_t.push_back(sum_t / static_cast<double>(count));
            node_v.push_back(sum_v / static_cast<double>(count));
        }
        sum_t = sum_v = 0.0;
        count = 0;
    };
    for (std::size_t i = 0; i < ch.times.size(); ++i) {
        if (!std::isfinite(ch.values[i])) {
            continue;
        }
        raw_t.push_back(ch.times[i]);
        const long long bin = std::llround((ch.times[i] - origin) / dt);
        if (count > 0 && bin != current_bin) {
            flush();
        }
        current_bin = bin;
        sum_t += ch.times[i];
        sum_v += ch.values[i];
        ++count;
    }
    flush();
    if (node_t.empty()) {
        return out;
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const double t = grid[g];
        const auto next_raw = std::lower_bound(raw_t.begin(), raw_t.end(), t);
        if (next_raw == raw_t.end()) {
            continue;
        }
        if (*next_raw != t) {
            if (next_raw == raw_t.begin() || *next_raw - *(next_raw - 1) > max_gap) {
                continue;
            }
        }
        const auto it = std::upper_bound(node_t.begin(), node_t.end(), t);
        if (it == node_t.begin()) {
            out[g] = node_v.front();
        } else if (it == node_t.end()) {
            out[g] = node_v.back();
        } else {
            const std::size_t j = static_cast<std::size_t>(it - node_t.begin());
            const double w = (t - node_t[j - 1]) / (node_t[j] - node_t[j - 1]);
            out[g] = node_v[j - 1] + w * (node_v[j] - node_v[j - 1]);
        }
    }
    return out;
}

struct ResampleOptions {
    double dt = 60.0;
    double max_gap = 0.0; ///< s; <= 0 selects 3 * dt
};

inline MetricSeries resample_uniform(const CellLog& cell, const ResampleOptions& opt, Domain domain)
{
    const double max_gap = opt.max_gap > 0.0 ? opt.max_gap : 3.0 * opt.dt;
    double first = std::numeric_limits<double>::infinity();
    double last = -std::numeric_limits<double>::infinity();
    std::size_t finite = 0;
    for (const auto& [key, ch] : cell.channels) {
        for (std::size_t i = 0; i < ch.times.size(); ++i) {
            if (std::isfinite(ch.values[i])) {
                first = std::min(first, ch.times[i]);
                last = std::max(last, ch.times[i]);
                ++finite;
            }
        }
    }
    if (finite < 2 || !(last > first)) {
        throw ValidationError("resample: cell '" + cell.cell_id + "' needs at least two records at distinct times");
    }
    MetricSeries s;
    s.cell_id = cell.cell_id;
    s.dt = opt.dt;
    s.domain = domain;
    s.times = aligned_grid(first, last, opt.dt);
    for (const auto& [key, ch] : cell.channels) {
        s.channels[key].values = resample_channel(ch, s.times, opt.dt, max_gap);
    }
    s.validate();
    return s;
}

/// Single-cell convenience form operating directly on records (values taken as given).
inline MetricSeries resample_uniform(std::span<const MetricRecord> records, double dt, double max_gap = 0.0)
{
    if (records.size() < 2) {
        throw ValidationError("resample: fewer than 2 records");
    }
    const auto cells = group_by_cell(records);
    if (cells.size() != 1) {
        throw ValidationError("resample: records span more than one cell");
    }
    return resample_uniform(cells.front(), {dt, max_gap}, Domain::Db);
}

/// Zero-phase moving average (forward then backward pass of length `window`),
/// excluding masked samples from the sums. Masked inputs stay masked.
inline std::vector<double> lowpass_window(std::span<const double> values, std::size_t window)
{
    if (window < 1) {
        throw ValidationError("lowpass window must be at least one sample");
    }
    const std::size_t n = values.size();
    auto pass = [&](std::span<const double> in, bool forward) {
        std::vector<double> out(n, kNaN);
        double sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t step = 0; step < n; ++step) {
            const std::size_t i = forward ? step : n - 1 - step;
            if (std::isfinite(in[i])) {
                sum += in[i];
                ++cnt;
            }
            if (step >= window) {
                const std::size_t old = forward ? i - window : i + window;
                if (std::isfinite(in[old])) {
                    sum -= in[old];
                    --cnt;
                }
            }
            if (std::isfinite(values[i]) && cnt > 0) {
                out[i] = sum / static_cast<double>(cnt);
            }
        }
        return out;
    };
    const auto fwd = pass(values, true);
    return pass(fwd, false);
}

inline std::vector<double> lowpass(std::span<const double> values, double dt, double cutoff_period)
{
    const auto window = static_cast<long long>(std::llround(cutoff_period / dt));
    if (window < 1) {
        throw ValidationError("lowpass window (cutoff/dt) rounds below one sample");
    }
    return lowpass_window(values, static_cast<std::size_t>(window));
}

inline MetricSeries lowpass(const MetricSeries& series, double cutoff_period)
{
    MetricSeries out = series;
    for (auto& [key, ch] : out.channels) {
        ch.values = lowpass(series.channels.at(key).values, series.dt, cutoff_period);
    }
    return out;
}

struct IngestConfig {
    double dt = 60.0;
    double max_gap = 0.0; ///< <= 0 selects 3 * dt
    double iqr_k = 1.0;
    std::size_t hampel_half = 5;
    double hampel_n_mad = 3.0;
    std::optional<double> lowpass_period; ///< s; unset skips the low-pass stage
};

struct IngestReport {
    std::size_t input_rows = 0;
    std::size_t dropped_rows = 0; ///< zero-metric records
    std::size_t iqr_flagged = 0;
    std::size_t hampel_replaced = 0;
    std::size_t iqr_insufficient_channels = 0;
};

struct IngestResult {
    std::vector<MetricSeries> series; ///< one per cell, linear domain
    IngestReport report;
};

/// Full pipeline from parsed records to per-cell uniform series (linear domain).
inline IngestResult preprocess(std::vector<MetricRecord> records, const IngestConfig& cfg)
{
    IngestResult res;
    res.report.input_rows = records.size();
    records = drop_invalid(std::move(records));
    res.report.dropped_rows = res.report.input_rows - records.size();
    if (records.empty()) {
        throw ValidationError("preprocess: no valid records left after dropping zero metrics");
    }
    auto cells = group_by_cell(records);
    for (auto& cell : cells) {
        for (auto& [key, ch] : cell.channels) {
            for (double& v : ch.values) {
                v = db_to_linear(v);
            }
            const IqrResult iqr = iqr_mask(ch.values, cfg.iqr_k);
            res.report.iqr_insufficient_channels += iqr.insufficient ? 1 : 0;
            for (std::size_t i = 0; i < ch.values.size(); ++i) {
                if (!iqr.keep[i] && std::isfinite(ch.values[i])) {
                    ch.values[i] = kNaN;
                    ++res.report.iqr_flagged;
                }
            }
            std::size_t replaced = 0;
            ch.values = hampel_filter(ch.values, cfg.hampel_half, cfg.hampel_n_mad, &replaced);
            res.report.hampel_replaced += replaced;
        }
        MetricSeries s = resample_uniform(cell, {cfg.dt, cfg.max_gap}, Domain::Linear);
        if (cfg.lowpass_period) {
            s = lowpass(s, *cfg.lowpass_period);
        }
        res.series.push_back(std::move(s));
    }
    return res;
}

} // namespace tidewave::ingest
