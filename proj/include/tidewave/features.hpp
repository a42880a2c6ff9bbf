#pragma once

// Regression feature matrix: per-antenna levels, within-metric pairwise
// differences and ratios, tide phase, optional fused tide-band feature.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "csv.hpp"
#include "cwt.hpp"
#include "detector.hpp"
#include "error.hpp"
#include "fusion.hpp"
#include "metric_series.hpp"

namespace tidewave::features {

struct FeatureMatrix {
    std::vector<double> times;
    std::vector<std::string> column_names;
    std::vector<double> data; ///< row-major
    std::vector<bool> row_valid;

    std::size_t rows() const { return times.size(); }
    std::size_t cols() const { return column_names.size(); }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }

    std::size_t column_index(const std::string& name) const
    {
        for (std::size_t c = 0; c < column_names.size(); ++c) {
            if (column_names[c] == name) {
                return c;
            }
        }
        throw ValidationError("feature matrix has no column '" + name + "'");
    }

    std::vector<std::size_t> valid_rows(std::size_t begin, std::size_t end) const
    {
        std::vector<std::size_t> out;
        for (std::size_t r = begin; r < end && r < rows(); ++r) {
            if (row_valid[r]) {
                out.push_back(r);
            }
        }
        return out;
    }
};

/// FNV-1a over the newline-joined column names, as 16 hex digits.
inline std::string schema_hash(std::span<const std::string> columns)
{
    std::uint64_t h = 14695981039346656037ull;
    auto feed = [&](unsigned char byte) {
        h ^= byte;
        h *= 1099511628211ull;
    };
    for (const auto& name : columns) {
        for (char ch : name) {
            feed(static_cast<unsigned char>(ch));
        }
        feed('\n');
    }
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

/// Column names produced by build_features for K antennas (and optional fused cells).
inline std::vector<std::string> feature_columns(std::size_t antennas, std::span<const std::string> fused_cells = {},
                                                bool with_fused = false)
{
    std::vector<std::string> names;
    for (Metric m : kAllMetrics) {
        for (std::size_t a = 0; a < antennas; ++a) {
            names.push_back(std::string(metric_name(m)) + "_ant" + std::to_string(a));
        }
    }
    for (Metric m : kAllMetrics) {
        const std::string base(metric_name(m));
        for (std::size_t i = 0; i < antennas; ++i) {
            for (std::size_t j = i + 1; j < antennas; ++j) {
                names.push_back(base + "_diff_" + std::to_string(i) + "_" + std::to_string(j));
            }
        }
        for (std::size_t i = 0; i < antennas; ++i) {
            for (std::size_t j = i + 1; j < antennas; ++j) {
                names.push_back(base + "_ratio_" + std::to_string(i) + "_" + std::to_string(j));
            }
        }
    }
    names.emplace_back("phase_sin");
    names.emplace_back("phase_cos");
    if (with_fused) {
        names.emplace_back("s_fused");
        for (const auto& cell : fused_cells) {
            names.push_back("avail_" + cell);
        }
    }
    return names;
}

/// Builds the matrix from a linear-domain series. `fused`, when given, must share
/// the series grid; unavailable values are zero-imputed and flagged.
inline FeatureMatrix build_features(const MetricSeries& series, const cwt::TidePhase& phase,
                                    const fusion::FusedFeature* fused = nullptr)
{
    if (series.domain != Domain::Linear) {
        throw ValidationError("build_features expects a linear-domain series");
    }
    series.validate();
    const std::size_t n = series.size();
    if (phase.sin_phase.size() != n || phase.cos_phase.size() != n) {
        throw ValidationError("tide phase length does not match the series grid");
    }
    if (fused && fused->times.size() != n) {
        throw ValidationError("fused feature is not on the series grid");
    }
    if (fused) {
        for (std::size_t i = 0; i < n; ++i) {
            if (std::abs(fused->times[i] - series.times[i]) > 1e-6 * std::max(1.0, series.dt)) {
                throw ValidationError("fused feature is not on the series grid");
            }
        }
    }
    const std::size_t k = series.antenna_count();
    FeatureMatrix fm;
    fm.times = series.times;
    fm.column_names = feature_columns(k, fused ? std::span<const std::string>(fused->cell_ids)
                                               : std::span<const std::string>(),
                                      fused != nullptr);
    const std::size_t cols = fm.column_names.size();
    fm.data.assign(n * cols, 0.0);
    fm.row_valid.assign(n, true);
    std::vector<const Channel*> ch;
    for (Metric m : kAllMetrics) {
        for (std::size_t a = 0; a < k; ++a) {
            ch.push_back(&series.channel(m, a));
        }
    }
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t c = 0;
        bool ok = true;
        for (const Channel* p : ch) {
            const double v = p->values[r];
            ok = ok && std::isfinite(v);
            fm.at(r, c++) = v;
        }
        for (std::size_t mi = 0; mi < 3; ++mi) {
            const Channel* const* level = &ch[mi * k];
            for (std::size_t i = 0; i < k; ++i) {
                for (std::size_t j = i + 1; j < k; ++j) {
                    fm.at(r, c++) = level[i]->values[r] - level[j]->values[r];
                }
            }
            for (std::size_t i = 0; i < k; ++i) {
                for (std::size_t j = i + 1; j < k; ++j) {
                    const double den = level[j]->values[r];
                    if (!(den > 0.0)) {
                        ok = false;
                    }
                    fm.at(r, c++) = level[i]->values[r] / den;
                }
            }
        }
        fm.at(r, c++) = phase.sin_phase[r];
        fm.at(r, c++) = phase.cos_phase[r];
        if (fused) {
            const bool have = fused->contributing_count[r] > 0 && std::isfinite(fused->values[r]);
            fm.at(r, c++) = have ? fused->values[r] : 0.0;
            for (const auto& avail : fused->availability) {
                fm.at(r, c++) = avail[r] ? 1.0 : 0.0;
            }
        }
        for (std::size_t q = 0; q < cols && ok; ++q) {
            ok = std::isfinite(fm.at(r, q));
        }
        fm.row_valid[r] = ok;
    }
    return fm;
}

/// Time of the high/low water event nearest to `record_start`, used to re-anchor
/// the tide phase; falls back to `record_start` when there is none.
inline double phase_origin(double record_start, std::span<const detector::DetectionEvent> events)
{
    double best = record_start;
    double best_dist = std::numeric_limits<double>::infinity();
    for (const auto& e : events) {
        if (e.kind == detector::EventKind::HighLowWater && std::abs(e.time - record_start) < best_dist) {
            best_dist = std::abs(e.time - record_start);
            best = e.time;
        }
    }
    return best;
}

struct StandardizationStats {
    std::vector<std::string> source_columns; ///< full column list the stats were fitted on
    std::vector<std::string> columns; ///< retained columns, in output order
    std::vector<double> mean;
    std::vector<double> std_dev; ///< population standard deviation
    std::vector<std::string> dropped; ///< zero-variance columns
};

/// Applies stored statistics; the result holds only the retained columns.
inline FeatureMatrix apply_standardize(const StandardizationStats& st, const FeatureMatrix& fm)
{
    FeatureMatrix out;
    out.times = fm.times;
    out.row_valid = fm.row_valid;
    out.column_names = st.columns;
    std::vector<std::size_t> src;
    for (const auto& name : st.columns) {
        src.push_back(fm.column_index(name));
    }
    out.data.resize(fm.rows() * st.columns.size());
    for (std::size_t r = 0; r < fm.rows(); ++r) {
        for (std::size_t c = 0; c < src.size(); ++c) {
            out.at(r, c) = (fm.at(r, src[c]) - st.mean[c]) / st.std_dev[c];
        }
    }
    return out;
}

/// Fits mean and population standard deviation on the valid rows among `train_rows`.
inline StandardizationStats fit_standardize(const FeatureMatrix& fm, std::span<const std::size_t> train_rows)
{
    std::vector<std::size_t> rows;
    for (std::size_t r : train_rows) {
        if (r >= fm.rows()) {
            throw ValidationError("training row index out of range");
        }
        if (fm.row_valid[r]) {
            rows.push_back(r);
        }
    }
    if (rows.size() < 2) {
        throw ValidationError("standardisation needs at least 2 valid training rows");
    }
    StandardizationStats st;
    st.source_columns = fm.column_names;
    const auto cnt = static_cast<double>(rows.size());
    for (std::size_t c = 0; c < fm.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t r : rows) {
            mean += fm.at(r, c);
        }
        mean /= cnt;
        double var = 0.0;
        for (std::size_t r : rows) {
            const double d = fm.at(r, c) - mean;
            var += d * d;
        }
        const double sd = std::sqrt(var / cnt);
        if (!(sd > 1e-12 * std::abs(mean)) || sd == 0.0) {
            st.dropped.push_back(fm.column_names[c]);
            continue;
        }
        st.columns.push_back(fm.column_names[c]);
        st.mean.push_back(mean);
        st.std_dev.push_back(sd);
    }
    if (st.columns.empty()) {
        throw ValidationError("every feature column has zero variance on the training rows");
    }
    return st;
}

struct SplitPlan {
    std::size_t train_end = 0; ///< train = [0, train_end)
    std::size_t val_end = 0;   ///< val = [train_end, val_end)
    std::size_t n = 0;         ///< test = [val_end, n)

    std::size_t train_size() const { return train_end; }
    std::size_t val_size() const { return val_end - train_end; }
    std::size_t test_size() const { return n - val_end; }
};

/// Chronological split with boundaries at floor(cumulative fraction * n).
inline SplitPlan chrono_split(std::size_t n, double train = 0.60, double val = 0.05, double test = 0.35)
{
    if (train < 0.0 || val < 0.0 || test < 0.0 || std::abs(train + val + test - 1.0) > 1e-9) {
        throw ValidationError("split fractions must be non-negative and sum to 1");
    }
    const auto nd = static_cast<double>(n);
    SplitPlan p;
    p.n = n;
    p.train_end = static_cast<std::size_t>(std::floor(train * nd + 1e-9));
    p.val_end = static_cast<std::size_t>(std::floor((train + val) * nd + 1e-9));
    if (p.train_size() == 0 || p.val_size() == 0 || p.test_size() == 0) {
        throw ValidationError("too few rows (" + std::to_string(n) + ") for non-empty chronological splits");
    }
    return p;
}

/// Number of leading rows used for adaptation: floor(fraction * n).
inline std::size_t adaptation_count(std::size_t n, double fraction)
{
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw ValidationError("adaptation fraction must lie in (0, 1]");
    }
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

inline void write_feature_csv(std::ostream& out, const FeatureMatrix& fm)
{
    std::vector<std::string> header{"t_unix_s", "row_valid"};
    header.insert(header.end(), fm.column_names.begin(), fm.column_names.end());
    csv::write_row(out, header);
    std::vector<std::string> row;
    for (std::size_t r = 0; r < fm.rows(); ++r) {
        row = {csv::format_double(fm.times[r]), fm.row_valid[r] ? "1" : "0"};
        for (std::size_t c = 0; c < fm.cols(); ++c) {
            row.push_back(csv::format_double(fm.at(r, c)));
        }
        csv::write_row(out, row);
    }
}

inline FeatureMatrix read_feature_csv(std::istream& in)
{
    const csv::Table table = csv::read(in);
    if (table.header.size() < 3 || table.header[0] != "t_unix_s" || table.header[1] != "row_valid") {
        throw ValidationError("feature csv: expected 't_unix_s,row_valid,...' header");
    }
    FeatureMatrix fm;
    fm.column_names.assign(table.header.begin() + 2, table.header.end());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (row.size() != table.header.size()) {
            throw ValidationError("feature csv: wrong column count at line " + std::to_string(table.line_numbers[r]));
        }
        const auto t = csv::parse_double(row[0]);
        if (!t) {
            throw ValidationError("feature csv: bad timestamp at line " + std::to_string(table.line_numbers[r]));
        }
        fm.times.push_back(*t);
        bool ok = row[1] == "1";
        for (std::size_t c = 2; c < row.size(); ++c) {
            const auto v = csv::parse_double(row[c]);
            fm.data.push_back(v ? *v : std::numeric_limits<double>::quiet_NaN());
            ok = ok && v && std::isfinite(*v);
        }
        fm.row_valid.push_back(ok);
    }
    return fm;
}

} // namespace tidewave::features
