#pragma once

// Multi-cell combination of tide-band features: rolling median/MAD
// standardisation per cell, optional integer lag alignment, pointwise median.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "csv.hpp"
#include "cwt.hpp"
#include "error.hpp"
#include "stats.hpp"

namespace tidewave::fusion {

struct StandardizedFeature {
    std::vector<double> times;
    std::vector<double> values; ///< NaN where masked
    double dt = 0.0;
    double window = 0.0;
    std::string cell_id;
    std::size_t mad_zero = 0;      ///< samples masked because MAD was 0
    std::size_t insufficient = 0;  ///< samples masked for too few window samples
};

struct StandardizeOptions {
    double window = 9.0 * 3600.0; ///< s
    std::size_t min_samples = 10;
    bool trailing = false; ///< [t - window, t] instead of a centred window
};

inline double uniform_step(std::span<const double> times)
{
    if (times.size() < 2) {
        throw ValidationError("feature needs at least 2 samples");
    }
    const double dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    for (std::size_t i = 1; i < times.size(); ++i) {
        if (std::abs(times[i] - times[i - 1] - dt) > 1e-6 * dt) {
            throw ValidationError("feature grid is not uniform");
        }
    }
    return dt;
}

/// (S - median_W) / MAD_W with the unscaled MAD, window clipped at the record ends.
inline StandardizedFeature rolling_standardize(const cwt::TideBandFeature& s, const StandardizeOptions& opt = {})
{
    StandardizedFeature out;
    out.dt = uniform_step(s.times);
    out.times = s.times;
    out.window = opt.window;
    out.cell_id = s.provenance;
    if (opt.window < 10.0 * out.dt - 1e-9) {
        throw ValidationError("standardisation window must span at least 10 samples");
    }
    const std::size_t n = s.times.size();
    out.values.assign(n, stats::kNaN);
    const auto w = static_cast<std::ptrdiff_t>(std::floor(opt.window / out.dt + 1e-9));
    std::vector<double> win;
    std::vector<double> dev;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(s.values[i])) {
            continue;
        }
        const auto ii = static_cast<std::ptrdiff_t>(i);
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, opt.trailing ? ii - w : ii - w / 2);
        const std::ptrdiff_t hi =
            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n) - 1, opt.trailing ? ii : ii + w / 2);
        win.clear();
        for (std::ptrdiff_t j = lo; j <= hi; ++j) {
            const double v = s.values[static_cast<std::size_t>(j)];
            if (std::isfinite(v)) {
                win.push_back(v);
            }
        }
        if (win.size() < opt.min_samples) {
            ++out.insufficient;
            continue;
        }
        const double med = stats::median_inplace(win);
        dev.resize(win.size());
        for (std::size_t k = 0; k < win.size(); ++k) {
            dev[k] = std::abs(win[k] - med);
        }
        const double spread = stats::median_inplace(dev);
        if (!(spread > 0.0)) {
            ++out.mad_zero;
            continue;
        }
        out.values[i] = (s.values[i] - med) / spread;
    }
    return out;
}

struct LagEstimate {
    int shift = 0;            ///< grid steps; b[i + shift] aligns with a[i]
    double correlation = stats::kNaN;
    bool accepted = false;    ///< correlation reached the threshold

    int applied() const { return accepted ? shift : 0; }
};

/// Masked Pearson correlation of a[i] against b[i + s] for |s| <= max_lag.
inline LagEstimate estimate_lag(const StandardizedFeature& a, const StandardizedFeature& b, double max_lag,
                                double threshold = 0.5)
{
    if (std::abs(a.dt - b.dt) > 1e-6 * a.dt) {
        throw ValidationError("estimate_lag: features must share a grid step");
    }
    const double dt = a.dt;
    const auto offset = static_cast<std::ptrdiff_t>(std::llround((b.times.front() - a.times.front()) / dt));
    const auto max_steps = static_cast<int>(std::floor(max_lag / dt + 1e-9));
    auto pairs = [&](int s, std::vector<double>& xa, std::vector<double>& xb) {
        xa.clear();
        xb.clear();
        for (std::size_t i = 0; i < a.values.size(); ++i) {
            const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i) + s - offset;
            if (j < 0 || j >= static_cast<std::ptrdiff_t>(b.values.size())) {
                continue;
            }
            const double va = a.values[i];
            const double vb = b.values[static_cast<std::size_t>(j)];
            if (std::isfinite(va) && std::isfinite(vb)) {
                xa.push_back(va);
                xb.push_back(vb);
            }
        }
    };
    std::vector<double> xa;
    std::vector<double> xb;
    pairs(0, xa, xb);
    if (static_cast<double>(xa.size()) * dt < 4.0 * max_lag || xa.size() < 3) {
        throw ValidationError("estimate_lag: overlapping valid span is shorter than 4 x max_lag");
    }
    LagEstimate best;
    double best_corr = -std::numeric_limits<double>::infinity();
    // Visit 0, -1, +1, -2, +2, ... so strict improvement keeps the preferred tie winner.
    for (int m = 0; m <= 2 * max_steps; ++m) {
        const int s = (m % 2 == 1) ? -(m + 1) / 2 : m / 2;
        pairs(s, xa, xb);
        if (xa.size() < 3) {
            continue;
        }
        const double c = stats::pearson(xa, xb);
        if (std::isfinite(c) && c > best_corr) {
            best_corr = c;
            best.shift = s;
        }
    }
    best.correlation = std::isfinite(best_corr) ? best_corr : stats::kNaN;
    best.accepted = std::isfinite(best_corr) && best_corr >= threshold;
    return best;
}

struct FusedFeature {
    std::vector<double> times;
    std::vector<double> values; ///< NaN where no cell is available
    std::vector<std::size_t> contributing_count;
    std::vector<std::string> cell_ids;
    std::vector<std::vector<bool>> availability; ///< per cell, per sample

    cwt::TideBandFeature as_feature() const
    {
        cwt::TideBandFeature f;
        f.times = times;
        f.values = values;
        f.provenance = "fused";
        f.valid.resize(times.size());
        for (std::size_t i = 0; i < times.size(); ++i) {
            f.valid[i] = contributing_count[i] > 0;
        }
        return f;
    }
};

/// Pointwise median over available cells; cell l contributes values[i + lags[l]].
/// All features must share the same time grid.
inline FusedFeature median_fuse(std::span<const StandardizedFeature> features, std::span<const int> lags = {})
{
    if (features.empty()) {
        throw ValidationError("median_fuse: no features");
    }
    if (!lags.empty() && lags.size() != features.size()) {
        throw ValidationError("median_fuse: one lag per feature required");
    }
    const auto& ref = features.front();
    for (const auto& f : features) {
        if (f.times.size() != ref.times.size() ||
            (!f.times.empty() && std::abs(f.times.front() - ref.times.front()) > 1e-6 * std::max(1.0, ref.dt))) {
            throw ValidationError("median_fuse: features are not on a common grid");
        }
    }
    const std::size_t n = ref.times.size();
    FusedFeature out;
    out.times = ref.times;
    out.values.assign(n, stats::kNaN);
    out.contributing_count.assign(n, 0);
    for (const auto& f : features) {
        out.cell_ids.push_back(f.cell_id);
    }
    out.availability.assign(features.size(), std::vector<bool>(n, false));
    std::vector<double> vals;
    for (std::size_t i = 0; i < n; ++i) {
        vals.clear();
        for (std::size_t l = 0; l < features.size(); ++l) {
            const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i) + (lags.empty() ? 0 : lags[l]);
            if (j < 0 || j >= static_cast<std::ptrdiff_t>(n)) {
                continue;
            }
            const double v = features[l].values[static_cast<std::size_t>(j)];
            if (std::isfinite(v)) {
                vals.push_back(v);
                out.availability[l][i] = true;
            }
        }
        out.contributing_count[i] = vals.size();
        if (!vals.empty()) {
            out.values[i] = stats::median_inplace(vals);
        }
    }
    return out;
}

/// Linear interpolation onto t0 + k dt, k < count. Points outside the feature
/// span, or next to a masked sample, are masked.
inline StandardizedFeature resample(const StandardizedFeature& f, double t0, double dt, std::size_t count)
{
    StandardizedFeature out = f;
    out.dt = dt;
    out.times.resize(count);
    out.values.assign(count, stats::kNaN);
    for (std::size_t k = 0; k < count; ++k) {
        const double t = t0 + dt * static_cast<double>(k);
        out.times[k] = t;
        if (f.times.empty() || t < f.times.front() - 1e-9 || t > f.times.back() + 1e-9) {
            continue;
        }
        const double pos = (t - f.times.front()) / f.dt;
        auto lo = static_cast<std::size_t>(std::floor(pos + 1e-9));
        lo = std::min(lo, f.times.size() - 1);
        const double w = std::max(0.0, pos - static_cast<double>(lo));
        if (w < 1e-9 || lo + 1 >= f.times.size()) {
            out.values[k] = f.values[lo];
        } else {
            out.values[k] = (1.0 - w) * f.values[lo] + w * f.values[lo + 1];
        }
    }
    return out;
}

struct FusionConfig {
    StandardizeOptions standardize;
    double grid_dt = 60.0;    ///< output grid step, s
    double max_lag = 0.0;     ///< s; 0 disables lag estimation
    double lag_threshold = 0.5;
};

struct FusionResult {
    FusedFeature fused;
    std::vector<StandardizedFeature> standardized; ///< on the native grids
    std::vector<LagEstimate> lags;                 ///< relative to the first cell
};

/// Standardise each cell on its native grid, resample onto a common grid of
/// multiples of grid_dt, then median-fuse.
inline FusionResult fuse(std::span<const cwt::TideBandFeature> cells, const FusionConfig& cfg = {})
{
    if (cells.empty()) {
        throw ValidationError("fuse: no cell features");
    }
    if (!(cfg.grid_dt > 0.0)) {
        throw ValidationError("fusion grid step must be positive");
    }
    FusionResult res;
    double first = std::numeric_limits<double>::infinity();
    double last = -std::numeric_limits<double>::infinity();
    for (const auto& c : cells) {
        res.standardized.push_back(rolling_standardize(c, cfg.standardize));
        first = std::min(first, c.times.front());
        last = std::max(last, c.times.back());
    }
    const double t0 = std::ceil(first / cfg.grid_dt - 1e-9) * cfg.grid_dt;
    const double t1 = std::floor(last / cfg.grid_dt + 1e-9) * cfg.grid_dt;
    const auto count = static_cast<std::size_t>(std::llround((t1 - t0) / cfg.grid_dt)) + 1;
    std::vector<StandardizedFeature> grid;
    for (const auto& s : res.standardized) {
        grid.push_back(resample(s, t0, cfg.grid_dt, count));
    }
    std::vector<int> lags(grid.size(), 0);
    res.lags.assign(grid.size(), LagEstimate{0, 1.0, true});
    if (cfg.max_lag > 0.0) {
        for (std::size_t l = 1; l < grid.size(); ++l) {
            res.lags[l] = estimate_lag(grid.front(), grid[l], cfg.max_lag, cfg.lag_threshold);
            lags[l] = res.lags[l].applied();
        }
    }
    res.fused = median_fuse(grid, lags);
    return res;
}

inline void write_fused_csv(std::ostream& out, const FusedFeature& f)
{
    std::vector<std::string> header{"t_unix_s", "s_fused", "contributing_count"};
    for (const auto& id : f.cell_ids) {
        header.push_back("avail_" + id);
    }
    csv::write_row(out, header);
    std::vector<std::string> row;
    for (std::size_t i = 0; i < f.times.size(); ++i) {
        row = {csv::format_double(f.times[i]), f.contributing_count[i] ? csv::format_double(f.values[i]) : "",
               std::to_string(f.contributing_count[i])};
        for (const auto& a : f.availability) {
            row.push_back(a[i] ? "1" : "0");
        }
        csv::write_row(out, row);
    }
}

inline FusedFeature read_fused_csv(std::istream& in)
{
    const csv::Table table = csv::read(in);
    if (table.header.size() < 3 || table.header[0] != "t_unix_s" || table.header[1] != "s_fused" ||
        table.header[2] != "contributing_count") {
        throw ValidationError("fused csv: expected 't_unix_s,s_fused,contributing_count,...' header");
    }
    FusedFeature f;
    for (std::size_t c = 3; c < table.header.size(); ++c) {
        const auto& name = table.header[c];
        if (name.rfind("avail_", 0) != 0) {
            throw ValidationError("fused csv: unexpected column '" + name + "'");
        }
        f.cell_ids.push_back(name.substr(6));
    }
    f.availability.resize(f.cell_ids.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto t = row.size() == table.header.size() ? csv::parse_double(row[0]) : std::nullopt;
        const auto cnt = t ? csv::parse_double(row[2]) : std::nullopt;
        if (!t || !cnt) {
            throw ValidationError("fused csv: malformed row at line " + std::to_string(table.line_numbers[r]));
        }
        const auto v = csv::parse_double(row[1]);
        f.times.push_back(*t);
        f.values.push_back(v ? *v : stats::kNaN);
        f.contributing_count.push_back(static_cast<std::size_t>(*cnt));
        for (std::size_t c = 3; c < row.size(); ++c) {
            f.availability[c - 3].push_back(row[c] == "1");
        }
    }
    return f;
}

} // namespace tidewave::fusion
