#pragma once

// Morlet continuous wavelet transform over a uniform real series, restricted
// to a band of scales. Scales are expressed in seconds: the wavelet at scale a
// is psi((t - b) / a) and its centre frequency is f0 / a in Hz.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "stats.hpp"

namespace tidewave::cwt {

using cplx = std::complex<double>;

struct WaveletSpec {
    double center_freq = 6.0 / (2.0 * std::numbers::pi); ///< f0, cycles per unit of normalised time
    double support = 4.0;                                 ///< kernel truncated at |tau| <= support

    void validate() const
    {
        if (!(center_freq > 0.0)) {
            throw ValidationError("wavelet centre frequency must be positive");
        }
        if (!(support > 0.0)) {
            throw ValidationError("wavelet support must be positive");
        }
    }

    /// Untruncated analytic Morlet kernel.
    cplx kernel(double tau) const
    {
        const double norm = std::pow(std::numbers::pi, -0.25);
        return norm * std::polar(std::exp(-0.5 * tau * tau), 2.0 * std::numbers::pi * center_freq * tau);
    }

    /// M1 = integral of tau * conj(psi(tau)), by trapezoidal quadrature on [-12, 12].
    cplx first_moment() const
    {
        constexpr int n = 48000;
        constexpr double lim = 12.0;
        const double h = 2.0 * lim / n;
        cplx sum = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double tau = -lim + h * i;
            const double w = (i == 0 || i == n) ? 0.5 : 1.0;
            sum += w * tau * std::conj(kernel(tau));
        }
        return sum * h;
    }
};

/// Sampled kernel at scale a (seconds) with step dt, mean-corrected so the taps
/// sum to zero: psi_d = psi - c * g with g the Gaussian envelope.
/// Index n runs from -half to +half; element n + half holds tau = n * dt / a.
inline std::vector<cplx> sampled_kernel(const WaveletSpec& spec, double scale, double dt)
{
    const auto half = static_cast<std::ptrdiff_t>(std::floor(spec.support * scale / dt));
    std::vector<cplx> psi(static_cast<std::size_t>(2 * half + 1));
    std::vector<double> gauss(psi.size());
    cplx psi_sum = 0.0;
    double g_sum = 0.0;
    for (std::ptrdiff_t n = -half; n <= half; ++n) {
        const double tau = static_cast<double>(n) * dt / scale;
        const auto i = static_cast<std::size_t>(n + half);
        psi[i] = spec.kernel(tau);
        gauss[i] = std::exp(-0.5 * tau * tau);
        psi_sum += psi[i];
        g_sum += gauss[i];
    }
    const cplx c = psi_sum / g_sum;
    for (std::size_t i = 0; i < psi.size(); ++i) {
        psi[i] -= c * gauss[i];
    }
    return psi;
}

struct ScaleBand {
    std::vector<double> scales;       ///< seconds, strictly increasing
    std::vector<double> pseudo_freqs; ///< f0 / a, Hz (decreasing)
    double f_min = 0.0;
    double f_max = 0.0;
    int voices_per_octave = 8;

    std::size_t size() const { return scales.size(); }
};

/// Log-spaced scales from f0/f_max to f0/f_min inclusive, ceil(log2(f_max/f_min) * voices) + 1 of them.
inline ScaleBand build_scales(const WaveletSpec& spec, double f_min, double f_max, int voices_per_octave = 8)
{
    spec.validate();
    if (!(f_min > 0.0) || !(f_max >= f_min)) {
        throw ValidationError("scale band must satisfy 0 < f_min <= f_max");
    }
    if (voices_per_octave < 1) {
        throw ValidationError("voices per octave must be at least 1");
    }
    ScaleBand band;
    band.f_min = f_min;
    band.f_max = f_max;
    band.voices_per_octave = voices_per_octave;
    const double octaves = std::log2(f_max / f_min);
    const auto count = static_cast<std::size_t>(std::ceil(octaves * voices_per_octave - 1e-9)) + 1;
    const double a_min = spec.center_freq / f_max;
    const double a_max = spec.center_freq / f_min;
    for (std::size_t i = 0; i < count; ++i) {
        const double a = count == 1 ? a_min
                                    : std::exp2(std::log2(a_min) + (std::log2(a_max) - std::log2(a_min)) *
                                                                       static_cast<double>(i) /
                                                                       static_cast<double>(count - 1));
        band.scales.push_back(a);
        band.pseudo_freqs.push_back(std::clamp(spec.center_freq / a, f_min, f_max));
    }
    return band;
}

enum class Padding { Reflect, Zero };

struct Scalogram {
    std::vector<double> times;
    double dt = 0.0;
    std::vector<double> scales;
    std::vector<double> pseudo_freqs;
    std::vector<double> coi; ///< cone-of-influence half-width per scale, seconds
    std::vector<cplx> coeffs; ///< row-major, scales x times

    std::size_t scale_count() const { return scales.size(); }
    std::size_t time_count() const { return times.size(); }
    const cplx& at(std::size_t s, std::size_t m) const { return coeffs[s * times.size() + m]; }
    double magnitude(std::size_t s, std::size_t m) const { return std::abs(at(s, m)); }

    /// True when column m lies at least one COI half-width away from both record ends.
    bool interior(std::size_t s, std::size_t m) const
    {
        return times[m] - times.front() >= coi[s] - 1e-9 && times.back() - times[m] >= coi[s] - 1e-9;
    }
};

namespace detail {

inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n)
{
    const std::ptrdiff_t period = 2 * n;
    std::ptrdiff_t r = i % period;
    if (r < 0) {
        r += period;
    }
    return r < n ? r : period - 1 - r;
}

} // namespace detail

/// W(a, b_m) = sum_n x[m + n] conj(psi_d(n dt / a)) dt / sqrt(a).
inline Scalogram cwt(std::span<const double> x, double t0, double dt, const ScaleBand& band,
                     const WaveletSpec& spec = {}, Padding padding = Padding::Reflect)
{
    spec.validate();
    if (x.size() < 2) {
        throw ValidationError("cwt needs at least 2 samples");
    }
    if (!(dt > 0.0)) {
        throw ValidationError("cwt needs a positive sampling step");
    }
    for (double v : x) {
        if (!std::isfinite(v)) {
            throw ValidationError("cwt input contains masked or non-finite samples");
        }
    }
    Scalogram sg;
    const auto n = static_cast<std::ptrdiff_t>(x.size());
    sg.dt = dt;
    sg.times.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        sg.times[i] = t0 + dt * static_cast<double>(i);
    }
    sg.scales = band.scales;
    sg.pseudo_freqs = band.pseudo_freqs;
    sg.coeffs.assign(band.size() * x.size(), cplx{});
    for (std::size_t s = 0; s < band.size(); ++s) {
        const double a = band.scales[s];
        sg.coi.push_back(std::numbers::sqrt2 * a);
        const auto psi = sampled_kernel(spec, a, dt);
        const auto half = static_cast<std::ptrdiff_t>(psi.size() / 2);
        const double norm = dt / std::sqrt(a);
        for (std::ptrdiff_t m = 0; m < n; ++m) {
            cplx acc = 0.0;
            for (std::ptrdiff_t k = -half; k <= half; ++k) {
                const std::ptrdiff_t j = m + k;
                double v;
                if (j >= 0 && j < n) {
                    v = x[static_cast<std::size_t>(j)];
                } else if (padding == Padding::Reflect) {
                    v = x[static_cast<std::size_t>(detail::reflect_index(j, n))];
                } else {
                    continue;
                }
                acc += v * std::conj(psi[static_cast<std::size_t>(k + half)]);
            }
            sg.coeffs[s * x.size() + static_cast<std::size_t>(m)] = acc * norm;
        }
    }
    return sg;
}

/// Fills masked (NaN) samples by linear interpolation, holding the nearest value at the ends.
inline std::vector<double> fill_masked(std::span<const double> x)
{
    std::vector<double> out(x.begin(), x.end());
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isfinite(x[i])) {
            idx.push_back(i);
        }
    }
    if (idx.empty()) {
        throw ValidationError("series is entirely masked");
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isfinite(out[i])) {
            continue;
        }
        const auto it = std::upper_bound(idx.begin(), idx.end(), i);
        if (it == idx.begin()) {
            out[i] = x[idx.front()];
        } else if (it == idx.end()) {
            out[i] = x[idx.back()];
        } else {
            const std::size_t lo = *(it - 1);
            const std::size_t hi = *it;
            const double w = static_cast<double>(i - lo) / static_cast<double>(hi - lo);
            out[i] = x[lo] + w * (x[hi] - x[lo]);
        }
    }
    return out;
}

struct TideBandFeature {
    std::vector<double> times;
    std::vector<double> values; ///< S(b) >= 0, NaN where undefined
    std::vector<bool> valid;    ///< all scales inside their cone of influence
    std::string provenance;     ///< cell id or "fused"
};

/// S(b) = sum over scales of |W(a, b)|.
inline TideBandFeature summed_coefficient(const Scalogram& sg, std::string provenance = {})
{
    TideBandFeature f;
    f.times = sg.times;
    f.provenance = std::move(provenance);
    f.values.assign(sg.time_count(), 0.0);
    f.valid.assign(sg.time_count(), true);
    for (std::size_t s = 0; s < sg.scale_count(); ++s) {
        for (std::size_t m = 0; m < sg.time_count(); ++m) {
            f.values[m] += sg.magnitude(s, m);
            if (!sg.interior(s, m)) {
                f.valid[m] = false;
            }
        }
    }
    return f;
}

inline void write_feature_csv(std::ostream& out, const TideBandFeature& f)
{
    csv::write_row(out, {"t_unix_s", "s_value", "coi_valid"});
    for (std::size_t i = 0; i < f.times.size(); ++i) {
        csv::write_row(out, {csv::format_double(f.times[i]), csv::format_double(f.values[i]), f.valid[i] ? "1" : "0"});
    }
}

inline TideBandFeature read_feature_csv(std::istream& in)
{
    const csv::Table table = csv::read(in);
    const auto tcol = table.column("t_unix_s");
    const auto vcol = table.column("s_value");
    const auto valid_col = table.column("coi_valid");
    if (!tcol || !vcol) {
        throw ValidationError("feature csv: expected t_unix_s and s_value columns");
    }
    const std::size_t tc = *tcol;
    const std::size_t vc = *vcol;
    TideBandFeature f;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto t = row.size() > tc ? csv::parse_double(row[tc]) : std::nullopt;
        const auto v = row.size() > vc ? csv::parse_double(row[vc]) : std::nullopt;
        if (!t) {
            throw ValidationError("feature csv: bad timestamp at line " + std::to_string(table.line_numbers[r]));
        }
        f.times.push_back(*t);
        f.values.push_back(v ? *v : stats::kNaN);
        f.valid.push_back(valid_col && row.size() > *valid_col ? row[*valid_col] == "1" : true);
    }
    return f;
}

/// Exports |W| as scales.csv / times.csv / coeffs_mag.csv style streams.
inline void write_scalogram_csv(std::ostream& scales_out, std::ostream& times_out, std::ostream& mag_out,
                                const Scalogram& sg)
{
    csv::write_row(scales_out, {"scale_s", "pseudo_freq_hz", "coi_s"});
    for (std::size_t s = 0; s < sg.scale_count(); ++s) {
        csv::write_row(scales_out, {csv::format_double(sg.scales[s]), csv::format_double(sg.pseudo_freqs[s]),
                                    csv::format_double(sg.coi[s])});
    }
    csv::write_row(times_out, {"t_unix_s"});
    for (double t : sg.times) {
        csv::write_row(times_out, {csv::format_double(t)});
    }
    std::vector<std::string> row;
    for (std::size_t s = 0; s < sg.scale_count(); ++s) {
        row.clear();
        for (std::size_t m = 0; m < sg.time_count(); ++m) {
            row.push_back(csv::format_double(sg.magnitude(s, m)));
        }
        csv::write_row(mag_out, row);
    }
}

struct Ridge {
    double f_peak = 0.0;           ///< pseudo-frequency of the dominant scale, Hz
    double f_peak_refined = 0.0;   ///< parabolic interpolation in log-scale between neighbouring voices
    std::size_t peak_scale = 0;
    std::vector<std::size_t> ridge; ///< per-column argmax scale index
    std::vector<double> mean_magnitude; ///< time-averaged |W| per scale over interior columns
    double stability = 0.0;        ///< fraction of interior columns whose argmax is within one voice of peak_scale
};

inline Ridge dominant_ridge(const Scalogram& sg)
{
    if (sg.scale_count() == 0 || sg.time_count() == 0) {
        throw ValidationError("dominant_ridge: empty scalogram");
    }
    Ridge r;
    r.mean_magnitude.assign(sg.scale_count(), 0.0);
    bool any = false;
    for (std::size_t s = 0; s < sg.scale_count(); ++s) {
        double sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t m = 0; m < sg.time_count(); ++m) {
            if (sg.interior(s, m)) {
                sum += sg.magnitude(s, m);
                ++cnt;
            }
        }
        if (cnt == 0) {
            r.mean_magnitude[s] = stats::kNaN;
            continue;
        }
        r.mean_magnitude[s] = sum / static_cast<double>(cnt);
        if (std::isfinite(r.mean_magnitude[s]) && r.mean_magnitude[s] > 0.0) {
            any = true;
        }
    }
    if (!any) {
        throw ValidationError("dominant_ridge: no interior samples with energy");
    }
    double best = -1.0;
    for (std::size_t s = 0; s < sg.scale_count(); ++s) {
        if (std::isfinite(r.mean_magnitude[s]) && r.mean_magnitude[s] > best) {
            best = r.mean_magnitude[s];
            r.peak_scale = s;
        }
    }
    r.f_peak = sg.pseudo_freqs[r.peak_scale];
    r.f_peak_refined = r.f_peak;
    const std::size_t p = r.peak_scale;
    if (p > 0 && p + 1 < sg.scale_count() && std::isfinite(r.mean_magnitude[p - 1]) &&
        std::isfinite(r.mean_magnitude[p + 1])) {
        const double y0 = r.mean_magnitude[p - 1];
        const double y1 = r.mean_magnitude[p];
        const double y2 = r.mean_magnitude[p + 1];
        const double denom = y0 - 2.0 * y1 + y2;
        if (denom < 0.0) {
            const double offset = 0.5 * (y0 - y2) / denom;
            const double step = std::log2(sg.scales[p + 1]) - std::log2(sg.scales[p]);
            const double a = std::exp2(std::log2(sg.scales[p]) + offset * step);
            r.f_peak_refined = sg.pseudo_freqs[p] * sg.scales[p] / a;
        }
    }
    r.ridge.resize(sg.time_count());
    const std::size_t last = sg.scale_count() - 1;
    std::size_t interior_cols = 0;
    std::size_t stable = 0;
    for (std::size_t m = 0; m < sg.time_count(); ++m) {
        std::size_t arg = 0;
        for (std::size_t s = 1; s < sg.scale_count(); ++s) {
            if (sg.magnitude(s, m) > sg.magnitude(arg, m)) {
                arg = s;
            }
        }
        r.ridge[m] = arg;
        if (sg.interior(last, m)) {
            ++interior_cols;
            const auto d = arg > p ? arg - p : p - arg;
            stable += d <= 1 ? 1 : 0;
        }
    }
    r.stability = interior_cols == 0 ? 0.0 : static_cast<double>(stable) / static_cast<double>(interior_cols);
    return r;
}

struct TidePhase {
    std::vector<double> sin_phase;
    std::vector<double> cos_phase;
};

/// phi(t) = 2 pi (t - t_start) / period.
inline TidePhase tide_phase(std::span<const double> times, double t_start, double period)
{
    if (!(period > 0.0)) {
        throw ValidationError("tide period must be positive");
    }
    TidePhase out;
    out.sin_phase.reserve(times.size());
    out.cos_phase.reserve(times.size());
    for (double t : times) {
        const double phi = 2.0 * std::numbers::pi * (t - t_start) / period;
        out.sin_phase.push_back(std::sin(phi));
        out.cos_phase.push_back(std::cos(phi));
    }
    return out;
}

/// Estimates the dominant period (seconds) of a uniform series within [1/f_max, 1/f_min].
inline double estimate_period(std::span<const double> x, double dt, double f_min, double f_max, int voices = 16,
                              const WaveletSpec& spec = {})
{
    const auto filled = fill_masked(x);
    const double mean = stats::mean(filled);
    std::vector<double> centred(filled.size());
    for (std::size_t i = 0; i < filled.size(); ++i) {
        centred[i] = filled[i] - mean;
    }
    const auto band = build_scales(spec, f_min, f_max, voices);
    const auto sg = cwt(centred, 0.0, dt, band, spec);
    return 1.0 / dominant_ridge(sg).f_peak_refined;
}

/// Envelope x = A + B cos(k h) seen by a single antenna, as used by the rate lemma.
struct Envelope {
    double offset = 0.0;      ///< A
    double amplitude = 1.0;   ///< B
    double spatial_rate = 1.0; ///< k, rad/m
};

/// C(a, b) = B k |sin(k h)| |M1| a^{1/2}.
inline double lemma_coefficient(const Envelope& env, double abs_m1, double scale, double h)
{
    return std::abs(env.amplitude * env.spatial_rate * std::sin(env.spatial_rate * h)) * abs_m1 * std::sqrt(scale);
}

struct RateLemmaReport {
    bool degenerate = false;
    std::vector<double> per_scale_corr; ///< corr(|W(a,.)|, C(a,.)|h'|) over interior columns
    double corr_rate = stats::kNaN;     ///< corr(S, |h'|) over COI-valid samples
    double corr_weighted = stats::kNaN; ///< corr(S, |h'| |sin(k h)|) over COI-valid samples
    std::size_t minima_count = 0;
    std::size_t max_minimum_offset = 0; ///< grid steps from each interior S minimum to the nearest h' zero
    double abs_m1 = 0.0;
};

/// Numerical derivative on a uniform grid (central inside, one-sided at the ends).
inline std::vector<double> gradient(std::span<const double> y, double dt)
{
    const std::size_t n = y.size();
    std::vector<double> d(n, 0.0);
    if (n < 2) {
        return d;
    }
    d[0] = (y[1] - y[0]) / dt;
    d[n - 1] = (y[n - 1] - y[n - 2]) / dt;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        d[i] = (y[i + 1] - y[i - 1]) / (2.0 * dt);
    }
    return d;
}

/// Builds x(t) = A + B cos(k h(t)) from a uniformly sampled tide and checks the
/// proportionality of the tide-band coefficients to the tide rate.
inline RateLemmaReport verify_rate_lemma(std::span<const double> heights, double dt, const Envelope& env,
                                         const ScaleBand& band, const WaveletSpec& spec = {})
{
    RateLemmaReport rep;
    rep.abs_m1 = std::abs(spec.first_moment());
    const auto rate = gradient(heights, dt);
    double max_rate = 0.0;
    for (double r : rate) {
        max_rate = std::max(max_rate, std::abs(r));
    }
    if (max_rate < 1e-12) {
        rep.degenerate = true;
        return rep;
    }
    std::vector<double> x(heights.size());
    for (std::size_t i = 0; i < heights.size(); ++i) {
        x[i] = env.offset + env.amplitude * std::cos(env.spatial_rate * heights[i]);
    }
    const auto sg = cwt(x, 0.0, dt, band, spec);
    for (std::size_t s = 0; s < sg.scale_count(); ++s) {
        std::vector<double> w;
        std::vector<double> c;
        for (std::size_t m = 0; m < sg.time_count(); ++m) {
            if (sg.interior(s, m)) {
                w.push_back(sg.magnitude(s, m));
                c.push_back(lemma_coefficient(env, rep.abs_m1, sg.scales[s], heights[m]) * std::abs(rate[m]));
            }
        }
        rep.per_scale_corr.push_back(w.size() >= 3 ? stats::pearson(w, c) : stats::kNaN);
    }
    const auto feat = summed_coefficient(sg);
    std::vector<double> s_in;
    std::vector<double> r_in;
    std::vector<double> rw_in;
    std::vector<std::size_t> cols;
    for (std::size_t m = 0; m < feat.values.size(); ++m) {
        if (feat.valid[m]) {
            s_in.push_back(feat.values[m]);
            r_in.push_back(std::abs(rate[m]));
            rw_in.push_back(std::abs(rate[m] * std::sin(env.spatial_rate * heights[m])));
            cols.push_back(m);
        }
    }
    if (s_in.size() >= 3) {
        rep.corr_rate = stats::pearson(s_in, r_in);
        rep.corr_weighted = stats::pearson(s_in, rw_in);
    }
    std::vector<std::size_t> zeros;
    for (std::size_t i = 0; i + 1 < rate.size(); ++i) {
        if (rate[i] == 0.0 || (rate[i] > 0.0) != (rate[i + 1] > 0.0)) {
            zeros.push_back(std::abs(rate[i]) <= std::abs(rate[i + 1]) ? i : i + 1);
        }
    }
    for (std::size_t j = 1; j + 1 < cols.size(); ++j) {
        const std::size_t m = cols[j];
        if (cols[j - 1] + 1 != m || cols[j + 1] != m + 1) {
            continue;
        }
        if (feat.values[m] < feat.values[m - 1] && feat.values[m] <= feat.values[m + 1]) {
            ++rep.minima_count;
            std::size_t best = std::numeric_limits<std::size_t>::max();
            for (std::size_t z : zeros) {
                best = std::min(best, z > m ? z - m : m - z);
            }
            rep.max_minimum_offset = std::max(rep.max_minimum_offset, best);
        }
    }
    return rep;
}

} // namespace tidewave::cwt
