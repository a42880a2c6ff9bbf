#pragma once

// Small robust-statistics helpers shared by the ingest, fusion and cwt modules.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "error.hpp"

namespace tidewave::stats {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Median of a scratch buffer; the buffer is reordered. Even count -> mean of middle two.
inline double median_inplace(std::span<double> v)
{
    if (v.empty()) {
        return kNaN;
    }
    const std::size_t n = v.size();
    const std::size_t mid = n / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (n % 2 == 1) {
        return upper;
    }
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

inline double median(std::span<const double> v)
{
    std::vector<double> tmp(v.begin(), v.end());
    return median_inplace(tmp);
}

/// Unscaled median absolute deviation about `center`.
inline double mad(std::span<const double> v, double center)
{
    std::vector<double> dev;
    dev.reserve(v.size());
    for (double x : v) {
        dev.push_back(std::abs(x - center));
    }
    return median_inplace(dev);
}

/// Quantile by linear interpolation between order statistics (Hyndman-Fan type 7).
/// `sorted` must be ascending and non-empty.
inline double quantile_sorted(std::span<const double> sorted, double p)
{
    if (sorted.empty()) {
        throw ValidationError("quantile of empty sample");
    }
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double mean(std::span<const double> v)
{
    if (v.empty()) {
        return kNaN;
    }
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

/// Pearson correlation; NaN when either side has zero variance.
inline double pearson(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) {
        throw ValidationError("pearson: length mismatch");
    }
    if (a.size() < 2) {
        return kNaN;
    }
    const double ma = mean(a);
    const double mb = mean(b);
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) {
        return kNaN;
    }
    return sab / std::sqrt(saa * sbb);
}

} // namespace tidewave::stats
