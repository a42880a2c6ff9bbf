#pragma once

// End-to-end helpers shared by the command-line tool and the acceptance suite.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "cwt.hpp"
#include "error.hpp"
#include "features.hpp"
#include "metric_series.hpp"
#include "regressor.hpp"
#include "sim.hpp"

namespace tidewave::pipeline {

struct AnalysisConfig {
    cwt::WaveletSpec wavelet;
    double f_min = 1.0 / 7200.0; ///< Hz, 120 min period
    double f_max = 1.0 / 600.0;  ///< Hz, 10 min period
    int voices = 8;
    Metric metric = Metric::Rsrp;
    std::optional<std::size_t> antenna; ///< unset: average S over all antennas
};

struct CellAnalysis {
    cwt::TideBandFeature feature;
    cwt::Scalogram scalogram; ///< of the first analysed antenna
};

/// S(b) of one cell. Each selected channel is analysed in the linear domain
/// (masked samples interpolated) and the per-antenna S values are averaged.
inline CellAnalysis analyze_cell(const MetricSeries& series, const AnalysisConfig& cfg)
{
    const MetricSeries lin = series.converted(Domain::Linear);
    const auto band = cwt::build_scales(cfg.wavelet, cfg.f_min, cfg.f_max, cfg.voices);
    std::vector<std::size_t> antennas;
    if (cfg.antenna) {
        antennas.push_back(*cfg.antenna);
    } else {
        for (std::size_t a = 0; a < lin.antenna_count(); ++a) {
            antennas.push_back(a);
        }
    }
    if (antennas.empty()) {
        throw ValidationError("series has no antennas to analyse");
    }
    CellAnalysis out;
    for (std::size_t i = 0; i < antennas.size(); ++i) {
        const auto& ch = lin.channel(cfg.metric, antennas[i]);
        const auto filled = cwt::fill_masked(ch.values);
        auto sg = cwt::cwt(filled, lin.times.front(), lin.dt, band, cfg.wavelet);
        const auto f = cwt::summed_coefficient(sg, lin.cell_id);
        if (i == 0) {
            out.feature = f;
            out.scalogram = std::move(sg);
        } else {
            for (std::size_t m = 0; m < f.values.size(); ++m) {
                out.feature.values[m] += f.values[m];
            }
        }
    }
    for (double& v : out.feature.values) {
        v /= static_cast<double>(antennas.size());
    }
    for (std::size_t m = 0; m < out.feature.values.size(); ++m) {
        bool any = false;
        for (std::size_t a : antennas) {
            any = any || lin.channel(cfg.metric, a).valid(m);
        }
        if (!any) {
            out.feature.values[m] = stats::kNaN;
        }
    }
    return out;
}

/// Feature matrix with the tide phase measured from `phase_origin` (record start when unset).
inline features::FeatureMatrix build_feature_matrix(const MetricSeries& series, double tide_period,
                                                    std::optional<double> phase_origin = std::nullopt,
                                                    const fusion::FusedFeature* fused = nullptr)
{
    const MetricSeries lin = series.converted(Domain::Linear);
    if (lin.times.empty()) {
        throw ValidationError("series is empty");
    }
    const auto phase = cwt::tide_phase(lin.times, phase_origin.value_or(lin.times.front()), tide_period);
    return features::build_features(lin, phase, fused);
}

/// Water level at each feature-row time, linearly interpolated from a tide record.
inline std::vector<double> targets_at(const sim::TideSeries& tide, const std::vector<double>& times)
{
    std::vector<double> y;
    y.reserve(times.size());
    for (double t : times) {
        y.push_back(tide.height_at(t));
    }
    return y;
}

struct Split {
    std::vector<std::size_t> train, val, test; ///< valid rows only
};

inline Split split_rows(const features::FeatureMatrix& fm, const features::SplitPlan& plan)
{
    return {fm.valid_rows(0, plan.train_end), fm.valid_rows(plan.train_end, plan.val_end),
            fm.valid_rows(plan.val_end, plan.n)};
}

inline regressor::VectorXd gather(const std::vector<double>& y, const std::vector<std::size_t>& rows)
{
    regressor::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out(static_cast<Eigen::Index>(i)) = y[rows[i]];
    }
    return out;
}

struct FitOptions {
    double train_frac = 0.60;
    double val_frac = 0.05;
    double test_frac = 0.35;
    std::size_t hidden = 40;
    std::uint64_t seed = 42;
    regressor::TrainConfig train;
};

struct FitResult {
    regressor::RegressorModel model;
    features::SplitPlan plan;
    Split rows;
    std::vector<double> predictions; ///< all rows, NaN where invalid
    regressor::EvalReport test;
    regressor::EvalReport train_report;
};

inline regressor::EvalReport evaluate_rows(const std::vector<double>& y_hat, const std::vector<double>& y,
                                           const std::vector<std::size_t>& rows)
{
    std::vector<double> a;
    std::vector<double> b;
    for (std::size_t r : rows) {
        a.push_back(y_hat[r]);
        b.push_back(y[r]);
    }
    return regressor::evaluate(a, b);
}

/// Chronological split, standardisation on the training rows, training with early
/// stopping on the validation rows and evaluation on the test rows.
inline FitResult fit(const features::FeatureMatrix& raw, const std::vector<double>& y, const FitOptions& opt)
{
    if (y.size() != raw.rows()) {
        throw ValidationError("target count does not match feature rows");
    }
    FitResult res;
    res.plan = features::chrono_split(raw.rows(), opt.train_frac, opt.val_frac, opt.test_frac);
    res.rows = split_rows(raw, res.plan);
    if (res.rows.train.size() < 2) {
        throw ValidationError("fewer than 2 valid training rows");
    }
    const auto stats = features::fit_standardize(raw, res.rows.train);
    const auto fm = features::apply_standardize(stats, raw);
    auto model = regressor::init_model(fm.cols(), opt.hidden, opt.seed);
    model = regressor::train(std::move(model), regressor::to_matrix(fm, res.rows.train), gather(y, res.rows.train),
                             regressor::to_matrix(fm, res.rows.val), gather(y, res.rows.val), opt.train);
    regressor::attach_schema(model, stats);
    res.predictions = regressor::predict(model, raw);
    res.model = std::move(model);
    res.train_report = evaluate_rows(res.predictions, y, res.rows.train);
    if (!res.rows.test.empty()) {
        res.test = evaluate_rows(res.predictions, y, res.rows.test);
    }
    return res;
}

/// Fine-tunes on the first `adapt_frac` of the rows and evaluates on the rest.
struct AdaptResult {
    regressor::RegressorModel model;
    std::size_t adapt_rows = 0;
    std::vector<double> predictions;
    regressor::EvalReport test;
};

inline AdaptResult adapt(const regressor::RegressorModel& base, const features::FeatureMatrix& raw,
                         const std::vector<double>& y, double adapt_frac, const regressor::TrainConfig& train_cfg,
                         const regressor::FineTuneConfig& ft_cfg)
{
    if (features::schema_hash(raw.column_names) != base.schema_hash) {
        throw ValidationError("adaptation features do not match the model schema");
    }
    AdaptResult res;
    res.adapt_rows = features::adaptation_count(raw.rows(), adapt_frac);
    const auto rows = raw.valid_rows(0, res.adapt_rows);
    const auto fm = features::apply_standardize(base.feature_stats, raw);
    res.model = regressor::fine_tune(base, regressor::to_matrix(fm, rows), gather(y, rows), train_cfg, ft_cfg);
    res.predictions = regressor::predict(res.model, raw);
    const auto test_rows = raw.valid_rows(res.adapt_rows, raw.rows());
    if (!test_rows.empty()) {
        res.test = evaluate_rows(res.predictions, y, test_rows);
    }
    return res;
}

} // namespace tidewave::pipeline
