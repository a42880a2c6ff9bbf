#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "tidewave/ingest.hpp"

using namespace tidewave;
using namespace tidewave::ingest;

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

// Quartile by linear interpolation between order statistics, computed by brute force.
double quartile_oracle(std::vector<double> v, double p)
{
    std::sort(v.begin(), v.end());
    const double pos = p * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    return lo + 1 < v.size() ? v[lo] + frac * (v[lo + 1] - v[lo]) : v[lo];
}

std::vector<MetricRecord> ramp_records(std::size_t n, double dt, std::size_t antennas)
{
    std::vector<MetricRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < antennas; ++a) {
            const double t = 1000.0 * dt + static_cast<double>(i) * dt;
            const double x = -90.0 + 0.01 * static_cast<double>(i) + static_cast<double>(a);
            out.push_back({t, "c1", a, x, x + 5.0, -10.0 + 0.001 * static_cast<double>(i)});
        }
    }
    return out;
}

} // namespace

TEST(Parse, EmptyFileWithHeader)
{
    std::istringstream in("t_unix_s,cell_id,antenna,rsrp_dbm,rssi_dbm,rsrq_db\n");
    const auto res = parse_records(in);
    EXPECT_TRUE(res.records.empty());
    EXPECT_TRUE(res.issues.empty());
}

TEST(Parse, BadRowsAreReportedWithLineNumbers)
{
    std::istringstream in("t_unix_s,cell_id,antenna,rsrp_dbm,rssi_dbm,rsrq_db\n"
                          "0,c1,0,-80,-70,-10\n"
                          "60,c1,0,abc,-70,-10\n"
                          "120,c1,0,-80\n"
                          "180,c1,9,-80,-70,-10\n");
    RecordFormat fmt;
    fmt.antenna_count = 4;
    const auto res = parse_records(in, fmt);
    ASSERT_EQ(res.records.size(), 1u);
    ASSERT_EQ(res.issues.size(), 3u);
    EXPECT_EQ(res.issues[0].line, 3u);
    EXPECT_NE(res.issues[0].message.find("rsrp"), std::string::npos);
    EXPECT_EQ(res.issues[1].line, 4u);
    EXPECT_EQ(res.issues[2].line, 5u);
}

TEST(Parse, WrongHeaderThrows)
{
    std::istringstream in("time,cell,antenna\n1,2,3\n");
    EXPECT_THROW(parse_records(in), ValidationError);
}

TEST(Parse, RoundTripKeepsOrderAndCount)
{
    const auto recs = ramp_records(1054, 60.0, 4);
    ASSERT_EQ(recs.size(), 4216u);
    std::stringstream ss;
    write_records_csv(ss, recs);
    const auto back = parse_records(ss);
    ASSERT_EQ(back.records.size(), 4216u);
    for (std::size_t i = 0; i < recs.size(); ++i) {
        EXPECT_EQ(back.records[i].timestamp, recs[i].timestamp);
        EXPECT_EQ(back.records[i].antenna, recs[i].antenna);
        EXPECT_EQ(back.records[i].rsrp, recs[i].rsrp);
    }
}

TEST(DropInvalid, ZeroMetricsRemoved)
{
    std::vector<MetricRecord> recs{{0, "c", 0, 0.0, -70, -10}, {1, "c", 0, -80, -70, -10}, {2, "c", 0, -80, -70, 0.0}};
    const auto kept = drop_invalid(recs);
    ASSERT_EQ(kept.size(), 1u);
    EXPECT_EQ(kept[0].timestamp, 1.0);
    std::vector<MetricRecord> zeros{{0, "c", 0, 0, 0, 0}, {1, "c", 1, 0, 0, 0}};
    EXPECT_TRUE(drop_invalid(zeros).empty());
}

TEST(Conversion, Examples)
{
    EXPECT_DOUBLE_EQ(db_to_linear(0.0), 1.0);
    EXPECT_DOUBLE_EQ(db_to_linear(10.0), 10.0);
    EXPECT_NEAR(db_to_linear(-90.0), 1e-9, 1e-24);
}

TEST(Conversion, RoundTrip)
{
    for (double x = 1e-14; x < 1e3; x *= 3.7) {
        EXPECT_NEAR(db_to_linear(linear_to_db(x)), x, 1e-12 * x);
    }
}

TEST(Iqr, SpikeFlagged)
{
    const std::vector<double> v{1, 2, 3, 4, 100};
    const auto r = iqr_mask(v, 1.0);
    EXPECT_EQ(r.keep, (std::vector<bool>{true, true, true, true, false}));
    EXPECT_DOUBLE_EQ(r.upper_fence, 6.0);
    EXPECT_DOUBLE_EQ(r.lower_fence, 0.0);
}

TEST(Iqr, FencesMatchBruteForceQuartiles)
{
    std::vector<double> v;
    for (int i = 0; i < 37; ++i) {
        v.push_back(std::sin(0.7 * i) * (1 + i % 5));
    }
    v[11] = 40.0;
    const double q1 = quartile_oracle(v, 0.25);
    const double q3 = quartile_oracle(v, 0.75);
    const auto r = iqr_mask(v, 1.5);
    EXPECT_NEAR(r.lower_fence, q1 - 1.5 * (q3 - q1), 1e-12);
    EXPECT_NEAR(r.upper_fence, q3 + 1.5 * (q3 - q1), 1e-12);
    for (std::size_t i = 0; i < v.size(); ++i) {
        EXPECT_EQ(r.keep[i], v[i] >= r.lower_fence && v[i] <= r.upper_fence);
    }
    EXPECT_FALSE(r.keep[11]);
}

TEST(Iqr, ConstantAndSymmetricSeriesUntouched)
{
    const std::vector<double> c(9, 3.0);
    for (bool k : iqr_mask(c).keep) {
        EXPECT_TRUE(k);
    }
    const std::vector<double> s{-2, -1, -0.5, 0, 0.5, 1, 2};
    for (bool k : iqr_mask(s).keep) {
        EXPECT_TRUE(k);
    }
}

TEST(Iqr, TooFewValuesKeepsEverythingFinite)
{
    const std::vector<double> v{1.0, std::nan(""), 1000.0};
    const auto r = iqr_mask(v);
    EXPECT_TRUE(r.insufficient);
    EXPECT_TRUE(r.keep[0]);
    EXPECT_FALSE(r.keep[1]);
    EXPECT_TRUE(r.keep[2]);
}

TEST(Hampel, SpikeInConstantSeriesReplaced)
{
    std::vector<double> v(15, 2.0);
    v[7] = 102.0;
    std::size_t replaced = 0;
    const auto out = hampel_filter(v, 3, 3.0, &replaced);
    EXPECT_EQ(out, std::vector<double>(15, 2.0));
    EXPECT_EQ(replaced, 1u);
}

TEST(Hampel, LinearRampUnchanged)
{
    std::vector<double> v;
    for (int i = 0; i < 40; ++i) {
        v.push_back(0.3 * i - 4.0);
    }
    const auto out = hampel_filter(v, 5, 3.0);
    // Independent check: every interior point is the median of its own window.
    for (std::size_t i = 5; i + 5 < v.size(); ++i) {
        std::vector<double> w(v.begin() + static_cast<long>(i) - 5, v.begin() + static_cast<long>(i) + 6);
        std::nth_element(w.begin(), w.begin() + 5, w.end());
        EXPECT_EQ(w[5], v[i]);
    }
    EXPECT_EQ(out, v);
}

TEST(Hampel, InfiniteThresholdIsIdentity)
{
    std::vector<double> v{1, 9, -3, 100, 4, 4, 7};
    EXPECT_EQ(hampel_filter(v, 2, inf), v);
}

TEST(Hampel, ZeroHalfWidthRejected)
{
    std::vector<double> v{1, 2, 3};
    EXPECT_THROW(hampel_filter(v, 0, 3.0), ValidationError);
}

TEST(Resample, Endpoints)
{
    std::vector<MetricRecord> recs{{0, "c", 0, 0.0, 1, 1}, {210, "c", 0, 210.0, 1, 1}};
    const auto s = resample_uniform(recs, 210.0, 1000.0);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s.channel(Metric::Rsrp, 0).values, (std::vector<double>{0.0, 210.0}));
}

TEST(Resample, Midpoint)
{
    std::vector<MetricRecord> recs{{0, "c", 0, 0.0, 1, 1}, {210, "c", 0, 210.0, 1, 1}};
    const auto s = resample_uniform(recs, 105.0, 1000.0);
    ASSERT_EQ(s.size(), 3u);
    EXPECT_DOUBLE_EQ(s.channel(Metric::Rsrp, 0).values[1], 105.0);
}

TEST(Resample, HoleIsMasked)
{
    std::vector<MetricRecord> recs;
    for (double t = 0; t <= 7200; t += 60) {
        if (t > 1800 && t < 3600) {
            continue;
        }
        recs.push_back({t, "c", 0, -80.0 + t / 3600.0, -70, -10});
    }
    const auto s = resample_uniform(recs, 60.0, 600.0);
    const auto& v = s.channel(Metric::Rsrp, 0).values;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double t = s.times[i];
        EXPECT_EQ(std::isfinite(v[i]), t <= 1800 || t >= 3600) << t;
    }
}

TEST(Resample, BinMeanOfSnapshots)
{
    // ten snapshots per minute around each grid point
    std::vector<MetricRecord> recs;
    for (int m = 0; m < 5; ++m) {
        for (int k = -5; k < 5; ++k) {
            recs.push_back({60.0 * m + 6.0 * k + 3.0, "c", 0, static_cast<double>(m) + 0.1 * k, -70, -10});
        }
    }
    const auto s = resample_uniform(recs, 60.0, 180.0);
    const auto& v = s.channel(Metric::Rsrp, 0).values;
    // bin means sit exactly on the grid points with value m - 0.05
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_NEAR(v[i], s.times[i] / 60.0 - 0.05, 1e-12);
    }
}

TEST(Resample, Errors)
{
    std::vector<MetricRecord> one{{0, "c", 0, -80, -70, -10}};
    EXPECT_THROW(resample_uniform(one, 60.0), ValidationError);
    std::vector<MetricRecord> two{{0, "c", 0, -80, -70, -10}, {60, "c", 0, -80, -70, -10}};
    EXPECT_THROW(resample_uniform(two, 0.0), ValidationError);
}

TEST(Resample, MaskedSamplesDoNotContribute)
{
    std::vector<MetricRecord> clean;
    for (int i = 0; i < 30; ++i) {
        clean.push_back({30.0 * i, "c", 0, std::sin(0.2 * i), -70, -10});
    }
    auto poisoned = clean;
    poisoned.insert(poisoned.begin() + 12, MetricRecord{30.0 * 11.5, "c", 0, std::nan(""), -70, -10});
    const auto a = resample_uniform(clean, 60.0, 120.0);
    const auto b = resample_uniform(poisoned, 60.0, 120.0);
    EXPECT_EQ(a.channel(Metric::Rsrp, 0).values, b.channel(Metric::Rsrp, 0).values);
}

TEST(Lowpass, ConstantUnchanged)
{
    const std::vector<double> v(50, 4.25);
    for (double y : lowpass_window(v, 7)) {
        EXPECT_NEAR(y, 4.25, 1e-12);
    }
}

TEST(Lowpass, NyquistRemoved)
{
    std::vector<double> v;
    for (int i = 0; i < 40; ++i) {
        v.push_back(i % 2 == 0 ? 1.0 : -1.0);
    }
    const auto y = lowpass_window(v, 2);
    for (std::size_t i = 2; i + 2 < y.size(); ++i) {
        EXPECT_NEAR(y[i], 0.0, 1e-12);
    }
}

TEST(Lowpass, SinusoidAttenuationMatchesBoxcarResponse)
{
    const double dt = 60.0;
    const double period = 12.6 * 3600.0;
    const std::size_t w = 15;
    std::vector<double> v;
    for (int i = 0; i < 3000; ++i) {
        v.push_back(std::sin(2 * std::numbers::pi * i * dt / period));
    }
    const auto y = lowpass_window(v, w);
    // forward+backward boxcar: gain is the squared Dirichlet kernel
    const double x = std::numbers::pi * dt / period;
    const double gain = std::pow(std::sin(w * x) / (w * std::sin(x)), 2);
    EXPECT_GT(gain, 0.99);
    double peak = 0.0;
    for (std::size_t i = 200; i + 200 < y.size(); ++i) {
        peak = std::max(peak, std::abs(y[i]));
    }
    EXPECT_NEAR(peak, gain, 1e-4);
}

TEST(Lowpass, ZeroPhase)
{
    std::vector<double> v(101, 0.0);
    v[50] = 1.0;
    const auto y = lowpass_window(v, 5);
    for (std::size_t k = 1; k < 10; ++k) {
        EXPECT_NEAR(y[50 - k], y[50 + k], 1e-15);
    }
}

TEST(Lowpass, MaskAware)
{
    std::vector<double> v(30, 1.0);
    v[10] = std::nan("");
    const auto y = lowpass_window(v, 4);
    EXPECT_TRUE(std::isnan(y[10]));
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (i != 10) {
            EXPECT_NEAR(y[i], 1.0, 1e-12);
        }
    }
}

TEST(Lowpass, WindowBelowOneRejected)
{
    std::vector<double> v{1, 2, 3};
    EXPECT_THROW(lowpass(v, 60.0, 20.0), ValidationError);
}

TEST(Pipeline, IdempotentOnCleanUniformData)
{
    IngestConfig cfg;
    cfg.dt = 60.0;
    const auto once = preprocess(ramp_records(300, 60.0, 2), cfg);
    ASSERT_EQ(once.series.size(), 1u);
    EXPECT_EQ(once.report.iqr_flagged, 0u);
    EXPECT_EQ(once.report.hampel_replaced, 0u);
    const auto twice = preprocess(series_to_records(once.series[0]), cfg);
    ASSERT_EQ(twice.series.size(), 1u);
    EXPECT_EQ(twice.series[0].times, once.series[0].times);
    for (const auto& [key, ch] : once.series[0].channels) {
        const auto& other = twice.series[0].channels.at(key).values;
        for (std::size_t i = 0; i < ch.values.size(); ++i) {
            EXPECT_NEAR(other[i], ch.values[i], 1e-12 * std::abs(ch.values[i]));
        }
    }
}

TEST(Pipeline, DropsZerosAndSplitsCells)
{
    auto recs = ramp_records(50, 60.0, 1);
    recs[3].rssi = 0.0;
    for (auto r : ramp_records(50, 60.0, 1)) {
        r.cell_id = "c2";
        recs.push_back(r);
    }
    const auto res = preprocess(recs, {});
    EXPECT_EQ(res.report.dropped_rows, 1u);
    ASSERT_EQ(res.series.size(), 2u);
    EXPECT_EQ(res.series[0].cell_id, "c1");
    EXPECT_EQ(res.series[1].cell_id, "c2");
    EXPECT_EQ(res.series[0].domain, Domain::Linear);
}
