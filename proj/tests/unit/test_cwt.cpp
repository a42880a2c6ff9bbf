#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "tidewave/cwt.hpp"

using tidewave::ValidationError;
using namespace tidewave::cwt;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> cosine(std::size_t n, double dt, double freq, double amp = 1.0, double phase = 0.0)
{
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = amp * std::cos(2 * kPi * freq * dt * static_cast<double>(i) + phase);
    }
    return x;
}

std::vector<double> noise(std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> x(n);
    for (double& v : x) {
        v = g(rng);
    }
    return x;
}

// Half-width in samples of the sampled kernel at scale a.
std::size_t support_samples(double a, double dt)
{
    return static_cast<std::size_t>(std::floor(WaveletSpec{}.support * a / dt));
}

ScaleBand tide_band()
{
    return build_scales({}, 1.0 / 7200.0, 1.0 / 600.0, 8);
}

} // namespace

TEST(Scales, OctaveCounts)
{
    const WaveletSpec spec;
    EXPECT_EQ(build_scales(spec, 0.5, 1.0, 1).size(), 2u);
    EXPECT_EQ(build_scales(spec, 1.0, 1.0, 1).size(), 1u);
    const auto band = tide_band();
    // enumerate the voices directly: one per 1/8 octave from f_max down past f_min
    std::size_t count = 0;
    while (std::exp2(-static_cast<double>(count) / 8.0) / 600.0 > 1.0 / 7200.0) {
        ++count;
    }
    EXPECT_EQ(band.size(), count + 1);
    EXPECT_EQ(band.size(), 30u);
}

TEST(Scales, IncreasingAndInsideBand)
{
    const auto band = tide_band();
    for (std::size_t i = 0; i < band.size(); ++i) {
        if (i > 0) {
            EXPECT_GT(band.scales[i], band.scales[i - 1]);
        }
        EXPECT_GE(band.pseudo_freqs[i], band.f_min);
        EXPECT_LE(band.pseudo_freqs[i], band.f_max);
    }
    EXPECT_NEAR(band.pseudo_freqs.front(), 1.0 / 600.0, 1e-15);
    EXPECT_NEAR(band.pseudo_freqs.back(), 1.0 / 7200.0, 1e-15);
}

TEST(Scales, InvertedBandRejected)
{
    EXPECT_THROW(build_scales({}, 2.0, 1.0, 8), ValidationError);
    EXPECT_THROW(build_scales({}, 0.0, 1.0, 8), ValidationError);
    EXPECT_THROW(build_scales({}, 0.5, 1.0, 0), ValidationError);
}

TEST(Kernel, ZeroMeanAfterSampling)
{
    for (double a : {700.0, 2300.0, 6875.0}) {
        const auto psi = sampled_kernel({}, a, 60.0);
        std::complex<double> sum = 0.0;
        double l1 = 0.0;
        for (const auto& p : psi) {
            sum += p;
            l1 += std::abs(p);
        }
        EXPECT_LT(std::abs(sum), 1e-8 * l1);
    }
}

TEST(Kernel, FirstMomentMatchesClosedForm)
{
    // integral of tau exp(-tau^2/2) exp(-i w tau) = -i w sqrt(2 pi) exp(-w^2/2)
    const WaveletSpec spec;
    const double w0 = 2 * kPi * spec.center_freq;
    const std::complex<double> expected =
        std::complex<double>(0.0, -w0) * std::sqrt(2 * kPi) * std::exp(-0.5 * w0 * w0) * std::pow(kPi, -0.25);
    const auto m1 = spec.first_moment();
    EXPECT_NEAR(std::abs(m1), std::abs(expected), 1e-3 * std::abs(expected));
    EXPECT_NEAR(std::abs(m1), 1.72e-7, 0.01e-7);
}

TEST(Transform, ZeroInputGivesZero)
{
    const std::vector<double> x(300, 0.0);
    const auto sg = cwt(x, 0.0, 60.0, tide_band());
    for (const auto& c : sg.coeffs) {
        EXPECT_EQ(std::abs(c), 0.0);
    }
    const auto s = summed_coefficient(sg);
    for (double v : s.values) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Transform, ConstantInputVanishesInInterior)
{
    const double c = 7.5;
    const std::vector<double> x(1500, c);
    const auto band = tide_band();
    const auto sg = cwt(x, 0.0, 60.0, band, {}, Padding::Zero);
    for (std::size_t s = 0; s < sg.scale_count(); ++s) {
        const std::size_t half = support_samples(band.scales[s], 60.0);
        for (std::size_t m = half; m + half < x.size(); ++m) {
            EXPECT_LT(sg.magnitude(s, m), 1e-6 * c * std::sqrt(2.0 * static_cast<double>(half) + 1.0));
        }
    }
}

TEST(Transform, Linearity)
{
    const auto x = noise(400, 1);
    const auto y = noise(400, 2);
    const double alpha = 1.7;
    const double beta = -0.35;
    std::vector<double> z(x.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = alpha * x[i] + beta * y[i];
    }
    const auto band = tide_band();
    const auto wx = cwt(x, 0.0, 60.0, band);
    const auto wy = cwt(y, 0.0, 60.0, band);
    const auto wz = cwt(z, 0.0, 60.0, band);
    for (std::size_t i = 0; i < wz.coeffs.size(); ++i) {
        const auto expected = alpha * wx.coeffs[i] + beta * wy.coeffs[i];
        EXPECT_LE(std::abs(wz.coeffs[i] - expected), 1e-9 * std::max(1.0, std::abs(expected)));
    }
}

TEST(Transform, ShiftCovarianceInInterior)
{
    const std::size_t shift = 7;
    const auto base = noise(900, 3);
    const std::vector<double> x(base.begin() + shift, base.end());
    const std::vector<double> y(base.begin(), base.end() - shift);
    const auto band = tide_band();
    const auto wx = cwt(x, 0.0, 60.0, band);
    const auto wy = cwt(y, 0.0, 60.0, band);
    for (std::size_t s = 0; s < band.size(); ++s) {
        const std::size_t half = support_samples(band.scales[s], 60.0);
        for (std::size_t m = half; m + half + shift < y.size(); ++m) {
            EXPECT_LE(std::abs(wy.at(s, m + shift) - wx.at(s, m)), 1e-9 * std::max(1.0, std::abs(wx.at(s, m))));
        }
    }
}

TEST(Transform, CosineArgmaxWithinOneVoice)
{
    const auto band = tide_band();
    const double voice = std::exp2(1.0 / 8.0);
    for (double period : {900.0, 1800.0, 2600.0, 4000.0}) {
        const double f = 1.0 / period;
        const auto x = cosine(3000, 60.0, f);
        const auto sg = cwt(x, 0.0, 60.0, band);
        const std::size_t m = x.size() / 2;
        std::size_t arg = 0;
        for (std::size_t s = 1; s < sg.scale_count(); ++s) {
            if (sg.magnitude(s, m) > sg.magnitude(arg, m)) {
                arg = s;
            }
        }
        const double ratio = sg.pseudo_freqs[arg] / f;
        EXPECT_LE(std::max(ratio, 1.0 / ratio), voice * 1.0001) << period;
    }
}

TEST(Transform, ArgmaxAgreesWithDenseScan)
{
    // dense scan with 64 voices per octave, then check the coarse band lands next to it
    const double f = 1.0 / 2000.0;
    const auto x = cosine(4000, 60.0, f, 1.0, 0.3);
    const auto dense = build_scales({}, 1.0 / 7200.0, 1.0 / 600.0, 64);
    const auto sd = cwt(x, 0.0, 60.0, dense);
    const auto rd = dominant_ridge(sd);
    const auto rc = dominant_ridge(cwt(x, 0.0, 60.0, tide_band()));
    EXPECT_NEAR(std::log2(rc.f_peak / rd.f_peak), 0.0, 1.0 / 8.0 + 1e-9);
    EXPECT_NEAR(rd.f_peak / f, 1.0, 0.02);
}

TEST(Transform, CoiIsSqrtTwoScale)
{
    const auto band = tide_band();
    const auto sg = cwt(noise(200, 4), 0.0, 60.0, band);
    for (std::size_t s = 0; s < band.size(); ++s) {
        EXPECT_DOUBLE_EQ(sg.coi[s], std::numbers::sqrt2 * band.scales[s]);
        if (s > 0) {
            EXPECT_GT(sg.coi[s], sg.coi[s - 1]);
        }
    }
}

TEST(Transform, RejectsShortOrMaskedInput)
{
    const std::vector<double> one{1.0};
    EXPECT_THROW(cwt(one, 0.0, 60.0, tide_band()), ValidationError);
    std::vector<double> masked(20, 1.0);
    masked[4] = std::nan("");
    EXPECT_THROW(cwt(masked, 0.0, 60.0, tide_band()), ValidationError);
}

TEST(Summed, SingleScaleEqualsMagnitude)
{
    const auto band = build_scales({}, 1.0 / 1800.0, 1.0 / 1800.0, 1);
    const auto x = noise(500, 5);
    const auto sg = cwt(x, 0.0, 60.0, band);
    const auto s = summed_coefficient(sg);
    for (std::size_t m = 0; m < x.size(); ++m) {
        EXPECT_EQ(s.values[m], sg.magnitude(0, m));
    }
}

TEST(Summed, HomogeneousAndSignInvariant)
{
    const auto band = tide_band();
    const auto x = noise(600, 6);
    std::vector<double> twice(x.size());
    std::vector<double> neg(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        twice[i] = 2.0 * x[i];
        neg[i] = -x[i];
    }
    const auto s = summed_coefficient(cwt(x, 0.0, 60.0, band));
    const auto s2 = summed_coefficient(cwt(twice, 0.0, 60.0, band));
    const auto sn = summed_coefficient(cwt(neg, 0.0, 60.0, band));
    for (std::size_t m = 0; m < x.size(); ++m) {
        EXPECT_NEAR(s2.values[m], 2.0 * s.values[m], 1e-12 * s.values[m]);
        EXPECT_NEAR(sn.values[m], s.values[m], 1e-12 * s.values[m]);
        EXPECT_GE(s.values[m], 0.0);
    }
}

TEST(Summed, ValidityFollowsLargestScaleCone)
{
    const auto band = tide_band();
    const auto sg = cwt(noise(800, 7), 1000.0, 60.0, band);
    const auto s = summed_coefficient(sg);
    const double cone = std::numbers::sqrt2 * band.scales.back();
    for (std::size_t m = 0; m < s.times.size(); ++m) {
        const bool inside = s.times[m] - s.times.front() >= cone - 1e-9 && s.times.back() - s.times[m] >= cone - 1e-9;
        EXPECT_EQ(s.valid[m], inside);
    }
}

TEST(Summed, CsvRoundTrip)
{
    const auto s = summed_coefficient(cwt(noise(300, 8), 1.7e9, 60.0, tide_band()), "c1");
    std::stringstream ss;
    write_feature_csv(ss, s);
    EXPECT_EQ(ss.str().substr(0, 27), "t_unix_s,s_value,coi_valid\n");
    const auto back = read_feature_csv(ss);
    EXPECT_EQ(back.times, s.times);
    EXPECT_EQ(back.values, s.values);
    EXPECT_EQ(back.valid, s.valid);
}

TEST(Ridge, SemidiurnalPeriodFromThreeDays)
{
    const double dt = 210.0;
    const double period = 12.6 * 3600.0;
    const auto x = cosine(static_cast<std::size_t>(3 * 86400 / dt), dt, 1.0 / period);
    const auto band = build_scales({}, 1.0 / (24 * 3600.0), 1.0 / (6 * 3600.0), 8);
    const auto r = dominant_ridge(cwt(x, 0.0, dt, band));
    EXPECT_NEAR(r.f_peak * period, 1.0, 0.05);
    EXPECT_NEAR(r.f_peak_refined * period, 1.0, 0.05);
    EXPECT_NEAR(r.f_peak * 1e3, 0.02204, 0.05 * 0.02204);
}

TEST(Ridge, BandCentreCosine)
{
    const auto band = tide_band();
    const double f = std::sqrt(band.f_min * band.f_max);
    const auto r = dominant_ridge(cwt(cosine(5000, 60.0, f), 0.0, 60.0, band));
    EXPECT_LE(std::abs(std::log2(r.f_peak / f)), 1.0 / 8.0 + 1e-9);
    EXPECT_GT(r.stability, 0.9);
}

TEST(Ridge, NoiseHasLowStability)
{
    const auto band = tide_band();
    const auto tone = dominant_ridge(cwt(cosine(5000, 60.0, 1.0 / 2400.0), 0.0, 60.0, band));
    const auto white = dominant_ridge(cwt(noise(5000, 9), 0.0, 60.0, band));
    EXPECT_LT(white.stability, 0.5);
    EXPECT_GT(tone.stability, white.stability);
}

TEST(Ridge, EstimatePeriodRecoversGenerator)
{
    const double period = 12.6 * 3600.0;
    auto x = cosine(3 * 86400 / 210, 210.0, 1.0 / period, 2.0);
    for (double& v : x) {
        v += 5.0;
    }
    x[40] = std::nan("");
    const double est = estimate_period(x, 210.0, 1.0 / (24 * 3600.0), 1.0 / (6 * 3600.0));
    EXPECT_NEAR(est / period, 1.0, 0.05);
}

TEST(Phase, Examples)
{
    const double T = 45360.0;
    const std::vector<double> t{0.0, T / 4, T};
    const auto p = tide_phase(t, 0.0, T);
    EXPECT_NEAR(p.sin_phase[0], 0.0, 1e-15);
    EXPECT_NEAR(p.cos_phase[0], 1.0, 1e-15);
    EXPECT_NEAR(p.sin_phase[1], 1.0, 1e-15);
    EXPECT_NEAR(p.cos_phase[1], 0.0, 1e-15);
    EXPECT_NEAR(p.sin_phase[2], 0.0, 1e-14);
    EXPECT_NEAR(p.cos_phase[2], 1.0, 1e-15);
    EXPECT_THROW(tide_phase(t, 0.0, 0.0), ValidationError);
}

TEST(Phase, MeasuredFromRecordStart)
{
    const std::vector<double> t{1000.0, 1000.0 + 100.0};
    const auto p = tide_phase(t, 1000.0, 400.0);
    EXPECT_NEAR(p.cos_phase[0], 1.0, 1e-15);
    EXPECT_NEAR(p.sin_phase[1], 1.0, 1e-15);
}

TEST(Lemma, FlatTideIsDegenerate)
{
    const std::vector<double> h(500, 0.3);
    const auto rep = verify_rate_lemma(h, 60.0, {2.0, 1.0, 5.7}, tide_band());
    EXPECT_TRUE(rep.degenerate);
}

TEST(Lemma, CoefficientGrowsBySqrtTwo)
{
    const Envelope env{2.0, 1.0, 5.7};
    const double m1 = std::abs(WaveletSpec{}.first_moment());
    for (double h : {0.05, 0.2, -0.31}) {
        EXPECT_NEAR(lemma_coefficient(env, m1, 2400.0, h) / lemma_coefficient(env, m1, 1200.0, h), std::sqrt(2.0),
                    1e-12);
    }
}

TEST(Lemma, SummedCoefficientTracksTideRate)
{
    const double dt = 60.0;
    const double period = 4 * 3600.0;
    std::vector<double> h;
    std::vector<double> rate;
    for (int i = 0; i < 4320; ++i) {
        const double t = i * dt;
        h.push_back(0.2 * std::sin(2 * kPi * t / period));
        rate.push_back(0.2 * 2 * kPi / period * std::cos(2 * kPi * t / period));
    }
    // Oracle: analytic derivative; the numeric gradient must agree before it is trusted.
    const auto numeric = gradient(h, dt);
    for (std::size_t i = 1; i + 1 < h.size(); ++i) {
        EXPECT_NEAR(numeric[i], rate[i], 1e-3 * 0.2 * 2 * kPi / period);
    }
    const auto rep = verify_rate_lemma(h, dt, {2.0, 1.0, 5.714}, tide_band());
    EXPECT_FALSE(rep.degenerate);
    EXPECT_GE(rep.corr_rate, 0.9);
    EXPECT_GT(rep.minima_count, 0u);
    EXPECT_LE(rep.max_minimum_offset, 2u);
}
