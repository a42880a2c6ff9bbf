#pragma once

// Two-ray (direct + single specular bounce) channel simulator.
//
// Converts a tide-height profile and a link geometry into received-power
// traces. All functions are pure; randomness comes only from explicit seeds.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "metric_series.hpp"

namespace tidewave::sim {

inline constexpr double kSpeedOfLight = 299'792'458.0;

struct LinkGeometry {
    double tx_height = 0.0;           ///< m
    std::vector<double> rx_heights;   ///< m, one per receive antenna
    double range = 0.0;               ///< horizontal Tx-Rx distance, m
    double carrier_freq = 0.0;        ///< Hz

    double wavelength() const { return kSpeedOfLight / carrier_freq; }
    std::size_t antenna_count() const { return rx_heights.size(); }

    void validate() const
    {
        if (!(range > 0.0)) {
            throw ValidationError("link range must be positive");
        }
        if (!(tx_height > 0.0)) {
            throw ValidationError("transmitter height must be positive");
        }
        if (!(carrier_freq > 0.0)) {
            throw ValidationError("carrier frequency must be positive");
        }
        if (rx_heights.empty()) {
            throw ValidationError("at least one receive antenna is required");
        }
        for (double h : rx_heights) {
            if (!(h > 0.0)) {
                throw ValidationError("receiver heights must be positive");
            }
        }
    }

    /// Range dominates the antenna heights by an order of magnitude.
    bool far_field_ok() const
    {
        double max_rx = 0.0;
        for (double h : rx_heights) {
            max_rx = std::max(max_rx, h);
        }
        return range > 10.0 * (tx_height + max_rx);
    }

    double rx_height(std::size_t rx) const
    {
        if (rx >= rx_heights.size()) {
            throw ValidationError("antenna index " + std::to_string(rx) + " out of range");
        }
        return rx_heights[rx];
    }

    /// Radians of envelope phase per metre of tide under the linearised path difference.
    double spatial_rate(std::size_t rx) const
    {
        return 2.0 * std::numbers::pi * (tx_height - rx_height(rx)) / (wavelength() * range);
    }

    /// The 420 m river link: 2659.8 MHz carrier, 45 m mast, four-element array.
    static LinkGeometry river_link_420m()
    {
        return {45.0, {1.95, 1.80, 1.65, 1.50}, 420.0, 2659.8e6};
    }

    /// The obstructed 510 m site on the same carrier.
    static LinkGeometry river_link_510m()
    {
        return {45.0, {2.45, 2.30, 2.15, 2.00}, 510.0, 2659.8e6};
    }
};

/// Surface reflection coefficient. Defaults to a perfect phase-inverting mirror.
struct ReflectionModel {
    double magnitude = 1.0;
    double phase = std::numbers::pi;
    /// Optional grazing-angle dependent coefficient; overrides magnitude/phase when set.
    std::function<std::complex<double>(double grazing_angle)> angle_dependent;

    void validate() const
    {
        if (!(magnitude >= 0.0 && magnitude <= 1.0)) {
            throw ValidationError("reflection magnitude must lie in [0, 1]");
        }
    }
};

enum class PathModel { Exact, Linearized };

/// Excess length of the reflected path over the direct one for tide height `h`.
inline double path_difference_exact(const LinkGeometry& g, std::size_t rx, double h)
{
    const double hr = g.rx_height(rx);
    const double d2 = g.range * g.range;
    const double up = g.tx_height + hr - 2.0 * h;
    const double direct = g.tx_height - hr;
    return std::sqrt(d2 + up * up) - std::sqrt(d2 + direct * direct);
}

/// First-order form 2h(h_t - h_r)/d. Note that a direct second-order expansion
/// of the exact form gives 2(h_t - h)(h_r - h)/d - 2h_t h_r/d instead; both are
/// exposed and the exact form is the simulator default.
inline double path_difference_linear(const LinkGeometry& g, std::size_t rx, double h)
{
    const double hr = g.rx_height(rx);
    return 2.0 * h * (g.tx_height - hr) / g.range;
}

inline double path_difference(const LinkGeometry& g, std::size_t rx, double h, PathModel model)
{
    return model == PathModel::Exact ? path_difference_exact(g, rx, h) : path_difference_linear(g, rx, h);
}

/// Power of the superposed direct and reflected phasors,
/// P0 [1 + |rho|^2 + 2|rho| cos(2 pi dd / lambda + phi_rho)].
inline double received_power_for_path(double path_diff, double wavelength, const ReflectionModel& refl,
                                      double base_power, double grazing_angle = 0.0)
{
    if (!(base_power > 0.0)) {
        throw ValidationError("base power must be positive");
    }
    std::complex<double> rho = std::polar(refl.magnitude, refl.phase);
    if (refl.angle_dependent) {
        rho = refl.angle_dependent(grazing_angle);
    }
    const double theta = 2.0 * std::numbers::pi * path_diff / wavelength;
    // Reflected phasor |rho| e^{-j(theta + phi)} added to the unit direct path.
    const std::complex<double> v = 1.0 + std::abs(rho) * std::polar(1.0, -(theta + std::arg(rho)));
    return base_power * std::norm(v);
}

inline double received_power(const LinkGeometry& g, std::size_t rx, double h, const ReflectionModel& refl,
                             double base_power, PathModel model = PathModel::Exact)
{
    const double dd = path_difference(g, rx, h, model);
    const double grazing = std::atan2(g.tx_height + g.rx_height(rx) - 2.0 * h, g.range);
    return received_power_for_path(dd, g.wavelength(), refl, base_power, grazing);
}

/// Tide change that advances the fade pattern by one full cycle.
inline double cycle_height(const LinkGeometry& g, std::size_t rx)
{
    const double dh = g.tx_height - g.rx_height(rx);
    if (dh == 0.0) {
        throw ValidationError("no height sensitivity: transmitter and receiver at equal height");
    }
    return std::abs(g.wavelength() * g.range / (2.0 * dh));
}

struct TideSeries {
    std::vector<double> times;   ///< seconds since epoch, strictly increasing
    std::vector<double> heights; ///< metres relative to mean sea level

    void validate() const
    {
        if (times.size() != heights.size()) {
            throw ValidationError("tide series: times and heights differ in length");
        }
        for (std::size_t i = 0; i < times.size(); ++i) {
            if (!std::isfinite(heights[i]) || !std::isfinite(times[i])) {
                throw ValidationError("tide series: non-finite value at sample " + std::to_string(i));
            }
            if (i > 0 && !(times[i] > times[i - 1])) {
                throw ValidationError("tide series: times must be strictly increasing");
            }
        }
    }

    /// Linear interpolation of the height at `t`, clamped to the end values.
    double height_at(double t) const
    {
        if (times.empty()) {
            throw ValidationError("tide series is empty");
        }
        if (t <= times.front()) {
            return heights.front();
        }
        if (t >= times.back()) {
            return heights.back();
        }
        const auto it = std::upper_bound(times.begin(), times.end(), t);
        const std::size_t j = static_cast<std::size_t>(it - times.begin());
        const double w = (t - times[j - 1]) / (times[j] - times[j - 1]);
        return heights[j - 1] + w * (heights[j] - heights[j - 1]);
    }
};

/// Inclusive uniform grid start, start+step, ... up to `stop`.
inline std::vector<double> uniform_grid(double start, double stop, double step)
{
    if (!(step > 0.0)) {
        throw ValidationError("grid step must be positive");
    }
    if (stop < start) {
        return {};
    }
    const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
    std::vector<double> grid(count);
    for (std::size_t i = 0; i < count; ++i) {
        grid[i] = start + static_cast<double>(i) * step;
    }
    return grid;
}

struct TideParams {
    double period = 12.6 * 3600.0; ///< s
    double amplitude = 0.5;        ///< m
    double mean = 0.0;             ///< m
    double phase = 0.0;            ///< rad
};

struct Perturbation {
    double std_dev = 0.0; ///< m, additive Gaussian
    std::uint64_t seed = 0;
};

/// h(t) = mean + amplitude sin(2 pi t / period + phase), t measured on the grid's own axis.
inline TideSeries synth_tide(const TideParams& p, std::span<const double> grid, const Perturbation& noise = {})
{
    if (!(p.period > 0.0)) {
        throw ValidationError("tide period must be positive");
    }
    if (grid.empty()) {
        throw ValidationError("tide grid is empty");
    }
    TideSeries tide;
    tide.times.assign(grid.begin(), grid.end());
    tide.heights.resize(grid.size());
    std::mt19937_64 rng(noise.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double h = p.mean + p.amplitude * std::sin(2.0 * std::numbers::pi * grid[i] / p.period + p.phase);
        if (noise.std_dev > 0.0) {
            h += noise.std_dev * gauss(rng);
        }
        tide.heights[i] = h;
    }
    tide.validate();
    return tide;
}

/// Simplified envelope p(h) = A + B cos(k h).
struct EnvelopeParams {
    double offset = 0.0;       ///< A, linear power
    double amplitude = 1.0;    ///< B, linear power
    double spatial_rate = 0.0; ///< k, rad/m

    static EnvelopeParams from_geometry(const LinkGeometry& g, std::size_t rx, double offset, double amplitude)
    {
        return {offset, amplitude, g.spatial_rate(rx)};
    }

    double at(double h) const { return offset + amplitude * std::cos(spatial_rate * h); }

    void validate() const
    {
        if (!(amplitude >= 0.0)) {
            throw ValidationError("envelope amplitude must be non-negative");
        }
    }
};

/// RSSI and RSRQ are generated as affine functions of the noiseless RSRP (dB domain),
/// each with its own independent noise draw.
struct SecondaryChannelModel {
    double rssi_slope = 0.8;
    double rssi_offset_db = 9.0;
    double rsrq_slope = 0.2;
    double rsrq_offset_db = 11.0;
};

struct SimulationOptions {
    std::string cell_id = "cell0";
    PathModel path = PathModel::Exact;
    std::vector<double> base_power_dbm; ///< per antenna; empty -> -80 dBm each
    double noise_std_db = 0.0;
    std::uint64_t seed = 42;
    SecondaryChannelModel secondary;
};

inline constexpr double kPowerFloorMw = 1e-30;

/// Per-antenna RSRP/RSSI/RSRQ traces (dB domain) on the tide's uniform grid.
inline MetricSeries simulate_metric_series(const LinkGeometry& g, const TideSeries& tide,
                                           const ReflectionModel& refl, const SimulationOptions& opt)
{
    g.validate();
    refl.validate();
    tide.validate();
    const std::size_t k = g.antenna_count();
    std::vector<double> base = opt.base_power_dbm;
    if (base.empty()) {
        base.assign(k, -80.0);
    }
    if (base.size() != k) {
        throw ValidationError("one base power per antenna is required");
    }
    if (opt.noise_std_db < 0.0) {
        throw ValidationError("noise standard deviation must be non-negative");
    }

    MetricSeries s;
    s.cell_id = opt.cell_id;
    s.domain = Domain::Db;
    s.times = tide.times;
    s.dt = tide.times.size() >= 2 ? (tide.times.back() - tide.times.front()) / static_cast<double>(tide.times.size() - 1)
                                  : 1.0;
    s.validate();
    for (std::size_t a = 0; a < k; ++a) {
        for (Metric m : kAllMetrics) {
            s.channel(m, a).values.resize(tide.times.size());
        }
    }

    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const SecondaryChannelModel& sc = opt.secondary;
    for (std::size_t i = 0; i < tide.times.size(); ++i) {
        for (std::size_t a = 0; a < k; ++a) {
            const double p = received_power(g, a, tide.heights[i], refl, db_to_linear(base[a]), opt.path);
            const double rsrp = linear_to_db(std::max(p, kPowerFloorMw));
            const double n1 = opt.noise_std_db * gauss(rng);
            const double n2 = opt.noise_std_db * gauss(rng);
            const double n3 = opt.noise_std_db * gauss(rng);
            s.channel(Metric::Rsrp, a).values[i] = rsrp + n1;
            s.channel(Metric::Rssi, a).values[i] = sc.rssi_slope * rsrp + sc.rssi_offset_db + n2;
            s.channel(Metric::Rsrq, a).values[i] = sc.rsrq_slope * rsrp + sc.rsrq_offset_db + n3;
        }
    }
    return s;
}

inline void write_tide_csv(std::ostream& out, const TideSeries& tide)
{
    csv::write_row(out, {"t_unix_s", "h_m"});
    for (std::size_t i = 0; i < tide.times.size(); ++i) {
        csv::write_row(out, {csv::format_double(tide.times[i]), csv::format_double(tide.heights[i])});
    }
}

inline TideSeries read_tide_csv(std::istream& in)
{
    const csv::Table t = csv::read(in);
    const auto tc = t.column("t_unix_s");
    const auto hc = t.column("h_m");
    if (!tc || !hc) {
        throw ValidationError("tide csv: expected columns t_unix_s,h_m");
    }
    TideSeries tide;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        if (row.size() != t.header.size()) {
            throw ValidationError("tide csv: wrong column count at line " + std::to_string(t.line_numbers[r]));
        }
        const auto tv = csv::parse_double(row[*tc]);
        const auto hv = csv::parse_double(row[*hc]);
        if (!tv || !hv) {
            throw ValidationError("tide csv: non-numeric value at line " + std::to_string(t.line_numbers[r]));
        }
        tide.times.push_back(*tv);
        tide.heights.push_back(*hv);
    }
    tide.validate();
    return tide;
}

} // namespace tidewave::sim
