#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "tidewave/features.hpp"

using namespace tidewave;
using namespace tidewave::features;

namespace {

MetricSeries linear_series(std::size_t n, std::size_t antennas, std::uint64_t seed = 1)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    MetricSeries s;
    s.cell_id = "c";
    s.domain = Domain::Linear;
    s.dt = 60.0;
    for (std::size_t i = 0; i < n; ++i) {
        s.times.push_back(1.7e9 + 60.0 * static_cast<double>(i));
    }
    for (Metric m : kAllMetrics) {
        for (std::size_t a = 0; a < antennas; ++a) {
            auto& v = s.channel(m, a).values;
            for (std::size_t i = 0; i < n; ++i) {
                v.push_back(1e-9 * u(rng));
            }
        }
    }
    return s;
}

cwt::TidePhase phase_for(const MetricSeries& s)
{
    return cwt::tide_phase(s.times, s.times.front(), 12.6 * 3600.0);
}

std::vector<std::size_t> iota(std::size_t n)
{
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = i;
    }
    return v;
}

std::size_t choose2(std::size_t k)
{
    return k * (k - 1) / 2;
}

} // namespace

TEST(Build, ColumnCountsByEnumeration)
{
    for (std::size_t k : {1u, 2u, 3u, 4u, 6u}) {
        const auto s = linear_series(10, k);
        const auto fm = build_features(s, phase_for(s));
        EXPECT_EQ(fm.cols(), 3 * k + 3 * 2 * choose2(k) + 2) << k;
        const std::set<std::string> unique(fm.column_names.begin(), fm.column_names.end());
        EXPECT_EQ(unique.size(), fm.cols());
    }
    const auto s4 = linear_series(10, 4);
    EXPECT_EQ(build_features(s4, phase_for(s4)).cols(), 50u);
    const auto s1 = linear_series(10, 1);
    EXPECT_EQ(build_features(s1, phase_for(s1)).cols(), 5u);
}

TEST(Build, ValuesMatchDefinitions)
{
    const auto s = linear_series(20, 3);
    const auto fm = build_features(s, phase_for(s));
    const auto& r0 = s.channel(Metric::Rssi, 0).values;
    const auto& r2 = s.channel(Metric::Rssi, 2).values;
    for (std::size_t r = 0; r < fm.rows(); ++r) {
        EXPECT_EQ(fm.at(r, fm.column_index("rssi_ant2")), r2[r]);
        EXPECT_EQ(fm.at(r, fm.column_index("rssi_diff_0_2")), r0[r] - r2[r]);
        EXPECT_EQ(fm.at(r, fm.column_index("rssi_ratio_0_2")), r0[r] / r2[r]);
    }
    EXPECT_NEAR(fm.at(0, fm.column_index("phase_cos")), 1.0, 1e-15);
}

TEST(Build, IdenticalAntennas)
{
    auto s = linear_series(30, 4);
    for (Metric m : kAllMetrics) {
        for (std::size_t a = 1; a < 4; ++a) {
            s.channel(m, a).values = s.channel(m, 0).values;
        }
    }
    const auto fm = build_features(s, phase_for(s));
    for (std::size_t c = 0; c < fm.cols(); ++c) {
        const auto& name = fm.column_names[c];
        for (std::size_t r = 0; r < fm.rows(); ++r) {
            if (name.find("_diff_") != std::string::npos) {
                EXPECT_EQ(fm.at(r, c), 0.0);
            } else if (name.find("_ratio_") != std::string::npos) {
                EXPECT_EQ(fm.at(r, c), 1.0);
            }
        }
    }
}

TEST(Build, DriftRobustness)
{
    const auto s = linear_series(25, 4);
    auto offset = s;
    auto scaled = s;
    for (std::size_t a = 0; a < 4; ++a) {
        for (double& v : offset.channel(Metric::Rsrp, a).values) {
            v += 0.25; // exact in binary, so differences are bit-identical
        }
        for (double& v : scaled.channel(Metric::Rsrp, a).values) {
            v *= 4.0;
        }
    }
    const auto base = build_features(s, phase_for(s));
    const auto fo = build_features(offset, phase_for(offset));
    const auto fs = build_features(scaled, phase_for(scaled));
    for (std::size_t c = 0; c < base.cols(); ++c) {
        const auto& name = base.column_names[c];
        if (name.rfind("rsrp_", 0) != 0) {
            continue;
        }
        for (std::size_t r = 0; r < base.rows(); ++r) {
            if (name.find("_ratio_") != std::string::npos) {
                EXPECT_EQ(fs.at(r, c), base.at(r, c)) << name;
            }
            if (name.find("_diff_") != std::string::npos) {
                EXPECT_NEAR(fo.at(r, c), base.at(r, c), 1e-15) << name;
            }
        }
    }
}

TEST(Build, MaskedChannelInvalidatesRow)
{
    auto s = linear_series(10, 2);
    s.channel(Metric::Rsrq, 1).values[4] = std::nan("");
    const auto fm = build_features(s, phase_for(s));
    for (std::size_t r = 0; r < fm.rows(); ++r) {
        EXPECT_EQ(fm.row_valid[r], r != 4);
    }
    EXPECT_EQ(fm.valid_rows(0, 10).size(), 9u);
}

TEST(Build, RejectsDbDomainAndMismatchedPhase)
{
    auto s = linear_series(10, 2);
    const auto ph = phase_for(s);
    s.domain = Domain::Db;
    EXPECT_THROW(build_features(s, ph), ValidationError);
    s.domain = Domain::Linear;
    cwt::TidePhase short_phase = ph;
    short_phase.sin_phase.pop_back();
    EXPECT_THROW(build_features(s, short_phase), ValidationError);
}

TEST(Build, FusedColumnsZeroImputed)
{
    const auto s = linear_series(6, 2);
    fusion::FusedFeature f;
    f.times = s.times;
    f.values = {0.5, std::nan(""), -1.0, 2.0, 0.0, 1.0};
    f.contributing_count = {2, 0, 1, 2, 2, 2};
    f.cell_ids = {"a", "b"};
    f.availability = {{true, false, true, true, true, true}, {true, false, false, true, true, true}};
    const auto fm = build_features(s, phase_for(s), &f);
    EXPECT_EQ(fm.cols(), 3 * 2 + 6 + 2 + 1 + 2u);
    EXPECT_EQ(fm.at(1, fm.column_index("s_fused")), 0.0);
    EXPECT_EQ(fm.at(1, fm.column_index("avail_a")), 0.0);
    EXPECT_EQ(fm.at(2, fm.column_index("avail_b")), 0.0);
    EXPECT_TRUE(fm.row_valid[1]);
}

TEST(Schema, DeterministicAndOrderSensitive)
{
    const auto a = feature_columns(4);
    EXPECT_EQ(schema_hash(a), schema_hash(feature_columns(4)));
    auto b = a;
    std::swap(b[0], b[1]);
    EXPECT_NE(schema_hash(a), schema_hash(b));
    EXPECT_NE(schema_hash(a), schema_hash(feature_columns(3)));
    EXPECT_EQ(schema_hash(a).size(), 16u);
    // FNV-1a of the empty input is the offset basis
    EXPECT_EQ(schema_hash(std::vector<std::string>{}), "cbf29ce484222325");
}

TEST(Standardize, TwoPointColumn)
{
    FeatureMatrix fm;
    fm.times = {0, 1, 2};
    fm.column_names = {"x"};
    fm.data = {0.0, 2.0, 10.0};
    fm.row_valid = {true, true, true};
    const std::vector<std::size_t> train{0, 1};
    const auto st = fit_standardize(fm, train);
    const auto out = apply_standardize(st, fm);
    EXPECT_DOUBLE_EQ(out.at(0, 0), -1.0);
    EXPECT_DOUBLE_EQ(out.at(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(out.at(2, 0), 9.0);
}

TEST(Standardize, ConstantColumnDropped)
{
    const auto s = linear_series(40, 2);
    auto fm = build_features(s, phase_for(s));
    const std::size_t c = fm.column_index("rsrp_ant1");
    for (std::size_t r = 0; r < fm.rows(); ++r) {
        fm.at(r, c) = 3e-9;
    }
    const auto st = fit_standardize(fm, iota(30));
    EXPECT_EQ(st.dropped, (std::vector<std::string>{"rsrp_ant1"}));
    EXPECT_EQ(st.columns.size(), fm.cols() - 1);
    EXPECT_EQ(apply_standardize(st, fm).cols(), fm.cols() - 1);
}

TEST(Standardize, TrainMomentsAreZeroAndOne)
{
    const auto s = linear_series(200, 4, 3);
    const auto fm = build_features(s, phase_for(s));
    const auto rows = iota(120);
    const auto out = apply_standardize(fit_standardize(fm, rows), fm);
    for (std::size_t c = 0; c < out.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t r : rows) {
            mean += out.at(r, c);
        }
        mean /= 120.0;
        double var = 0.0;
        for (std::size_t r : rows) {
            var += (out.at(r, c) - mean) * (out.at(r, c) - mean);
        }
        var /= 120.0;
        EXPECT_LT(std::abs(mean), 1e-9) << out.column_names[c];
        EXPECT_NEAR(var, 1.0, 1e-9) << out.column_names[c];
    }
}

TEST(Standardize, AlreadyStandardizedUnchanged)
{
    FeatureMatrix fm;
    fm.column_names = {"z"};
    const std::vector<double> z{-1.5, -0.5, 0.5, 1.5};
    const double sd = std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 4.0);
    for (std::size_t i = 0; i < z.size(); ++i) {
        fm.times.push_back(static_cast<double>(i));
        fm.data.push_back(z[i] / sd);
        fm.row_valid.push_back(true);
    }
    const auto out = apply_standardize(fit_standardize(fm, iota(4)), fm);
    for (std::size_t i = 0; i < z.size(); ++i) {
        EXPECT_NEAR(out.at(i, 0), fm.at(i, 0), 1e-12);
    }
}

TEST(Standardize, NoLeakageFromTestRows)
{
    const auto s = linear_series(100, 3, 4);
    auto fm = build_features(s, phase_for(s));
    const auto plan = chrono_split(fm.rows());
    const auto train = iota(plan.train_end);
    const auto before = fit_standardize(fm, train);
    for (std::size_t r = plan.val_end; r < fm.rows(); ++r) {
        for (std::size_t c = 0; c < fm.cols(); ++c) {
            fm.at(r, c) = 1e9 * static_cast<double>(r + c);
        }
    }
    const auto after = fit_standardize(fm, train);
    EXPECT_EQ(before.mean, after.mean);
    EXPECT_EQ(before.std_dev, after.std_dev);
    EXPECT_EQ(before.columns, after.columns);
}

TEST(Standardize, InvalidRowsIgnored)
{
    FeatureMatrix fm;
    fm.column_names = {"x"};
    fm.times = {0, 1, 2};
    fm.data = {0.0, std::nan(""), 2.0};
    fm.row_valid = {true, false, true};
    const auto st = fit_standardize(fm, iota(3));
    EXPECT_DOUBLE_EQ(st.mean[0], 1.0);
    EXPECT_DOUBLE_EQ(st.std_dev[0], 1.0);
    fm.row_valid = {true, false, false};
    EXPECT_THROW(fit_standardize(fm, iota(3)), ValidationError);
}

TEST(Split, PaperCount)
{
    const auto p = chrono_split(4216);
    // oracle: floor of cumulative fractions, computed in integers
    EXPECT_EQ(p.train_size(), 4216u * 60 / 100);
    EXPECT_EQ(p.val_size(), 4216u * 65 / 100 - 4216u * 60 / 100);
    EXPECT_EQ(p.train_size(), 2529u);
    EXPECT_EQ(p.val_size(), 211u);
    EXPECT_EQ(p.test_size(), 1476u);
}

TEST(Split, HundredRows)
{
    const auto p = chrono_split(100);
    EXPECT_EQ(p.train_size(), 60u);
    EXPECT_EQ(p.val_size(), 5u);
    EXPECT_EQ(p.test_size(), 35u);
}

TEST(Split, CoversInOrder)
{
    for (std::size_t n = 20; n < 3000; n += 97) {
        const auto p = chrono_split(n, 0.7, 0.1, 0.2);
        EXPECT_LT(0u, p.train_end);
        EXPECT_LT(p.train_end, p.val_end);
        EXPECT_LT(p.val_end, n);
        EXPECT_EQ(p.train_size() + p.val_size() + p.test_size(), n);
    }
}

TEST(Split, Errors)
{
    EXPECT_THROW(chrono_split(10), ValidationError);
    EXPECT_THROW(chrono_split(100, 0.5, 0.1, 0.1), ValidationError);
}

TEST(Split, AdaptationRows)
{
    EXPECT_EQ(adaptation_count(4100, 0.10), 410u);
    EXPECT_THROW(adaptation_count(100, 0.0), ValidationError);
}

TEST(Phase, OriginSnapsToNearestLowOrHigh)
{
    const std::vector<detector::DetectionEvent> ev{{500.0, detector::EventKind::MaxFlow, 1, 800},
                                                   {2000.0, detector::EventKind::HighLowWater, 1, 2300},
                                                   {-900.0, detector::EventKind::HighLowWater, 1, -600}};
    EXPECT_EQ(phase_origin(0.0, ev), -900.0);
    EXPECT_EQ(phase_origin(0.0, {}), 0.0);
}

TEST(Csv, RoundTrip)
{
    auto s = linear_series(8, 2);
    s.channel(Metric::Rsrp, 0).values[3] = std::nan("");
    const auto fm = build_features(s, phase_for(s));
    std::stringstream ss;
    write_feature_csv(ss, fm);
    const auto back = read_feature_csv(ss);
    EXPECT_EQ(back.column_names, fm.column_names);
    EXPECT_EQ(back.row_valid, fm.row_valid);
    for (std::size_t r = 0; r < fm.rows(); ++r) {
        for (std::size_t c = 0; c < fm.cols(); ++c) {
            if (std::isfinite(fm.at(r, c))) {
                EXPECT_EQ(back.at(r, c), fm.at(r, c));
            }
        }
    }
}
