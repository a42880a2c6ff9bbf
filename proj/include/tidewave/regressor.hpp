#pragma once

// Single-hidden-layer tanh network with a linear output for water-level
// regression. Targets are z-scored for training and de-scaled on output.
//
// Parameter vector layout (used by the Jacobian and by gradient checks):
//   [ W_hidden row-major (H x D) | b_hidden (H) | w_out (H) | b_out ]

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "features.hpp"
#include "json.hpp"

namespace tidewave::regressor {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct TargetStats {
    double mean = 0.0;
    double std_dev = 1.0;
};

enum class Optimizer { LevenbergMarquardt, GradientDescent };

inline std::string optimizer_name(Optimizer o)
{
    return o == Optimizer::LevenbergMarquardt ? "levenberg_marquardt" : "gradient_descent";
}

inline Optimizer parse_optimizer(const std::string& s)
{
    if (s == "levenberg_marquardt" || s == "lm") {
        return Optimizer::LevenbergMarquardt;
    }
    if (s == "gradient_descent" || s == "gd") {
        return Optimizer::GradientDescent;
    }
    throw ValidationError("unknown optimizer '" + s + "'");
}

struct TrainingMetadata {
    std::uint64_t seed = 0;
    std::string optimizer;
    std::size_t epochs = 0;
    std::size_t best_epoch = 0;
    std::vector<double> train_loss; ///< per epoch, z-scored MSE
    std::vector<double> val_loss;
    std::size_t fine_tune_epochs = 0;
};

struct RegressorModel {
    MatrixXd w_hidden; ///< H x D
    VectorXd b_hidden; ///< H
    VectorXd w_out;    ///< H
    double b_out = 0.0;
    TargetStats target;
    features::StandardizationStats feature_stats;
    std::vector<std::string> input_columns;
    std::string schema_hash;
    TrainingMetadata metadata;

    std::size_t input_dim() const { return static_cast<std::size_t>(w_hidden.cols()); }
    std::size_t hidden() const { return static_cast<std::size_t>(w_hidden.rows()); }
    std::size_t parameter_count() const { return hidden() * input_dim() + 2 * hidden() + 1; }

    VectorXd parameters() const
    {
        const auto h = static_cast<Eigen::Index>(hidden());
        const auto d = static_cast<Eigen::Index>(input_dim());
        VectorXd p(static_cast<Eigen::Index>(parameter_count()));
        for (Eigen::Index i = 0; i < h; ++i) {
            p.segment(i * d, d) = w_hidden.row(i).transpose();
        }
        p.segment(h * d, h) = b_hidden;
        p.segment(h * d + h, h) = w_out;
        p(h * d + 2 * h) = b_out;
        return p;
    }

    void set_parameters(const VectorXd& p)
    {
        const auto h = static_cast<Eigen::Index>(hidden());
        const auto d = static_cast<Eigen::Index>(input_dim());
        if (p.size() != static_cast<Eigen::Index>(parameter_count())) {
            throw ValidationError("parameter vector has the wrong length");
        }
        for (Eigen::Index i = 0; i < h; ++i) {
            w_hidden.row(i) = p.segment(i * d, d).transpose();
        }
        b_hidden = p.segment(h * d, h);
        w_out = p.segment(h * d + h, h);
        b_out = p(h * d + 2 * h);
    }

    bool finite() const
    {
        return w_hidden.allFinite() && b_hidden.allFinite() && w_out.allFinite() && std::isfinite(b_out) &&
               std::isfinite(target.mean) && std::isfinite(target.std_dev);
    }
};

/// Glorot-uniform weights, zero biases.
inline RegressorModel init_model(std::size_t input_dim, std::size_t hidden = 40, std::uint64_t seed = 42)
{
    if (input_dim < 1 || hidden < 1) {
        throw ValidationError("network dimensions must be at least 1");
    }
    RegressorModel m;
    std::mt19937_64 rng(seed);
    const double lim_h = std::sqrt(6.0 / static_cast<double>(input_dim + hidden));
    const double lim_o = std::sqrt(6.0 / static_cast<double>(hidden + 1));
    std::uniform_real_distribution<double> uh(-lim_h, lim_h);
    std::uniform_real_distribution<double> uo(-lim_o, lim_o);
    const auto h = static_cast<Eigen::Index>(hidden);
    const auto d = static_cast<Eigen::Index>(input_dim);
    m.w_hidden.resize(h, d);
    for (Eigen::Index i = 0; i < h; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            m.w_hidden(i, j) = uh(rng);
        }
    }
    m.b_hidden = VectorXd::Zero(h);
    m.w_out.resize(h);
    for (Eigen::Index i = 0; i < h; ++i) {
        m.w_out(i) = uo(rng);
    }
    m.metadata.seed = seed;
    return m;
}

/// Network output in z-scored target units, one value per row of X.
inline VectorXd forward_scaled(const RegressorModel& m, const MatrixXd& x, MatrixXd* activations = nullptr)
{
    if (static_cast<std::size_t>(x.cols()) != m.input_dim()) {
        throw ValidationError("feature row has " + std::to_string(x.cols()) + " columns, model expects " +
                              std::to_string(m.input_dim()));
    }
    MatrixXd a = (x * m.w_hidden.transpose()).rowwise() + m.b_hidden.transpose();
    a = a.array().tanh().matrix();
    VectorXd y = (a * m.w_out).array() + m.b_out;
    if (activations) {
        *activations = std::move(a);
    }
    return y;
}

/// Water level in metres.
inline VectorXd forward(const RegressorModel& m, const MatrixXd& x)
{
    return (forward_scaled(m, x).array() * m.target.std_dev + m.target.mean).matrix();
}

inline double forward(const RegressorModel& m, std::span<const double> row)
{
    const Eigen::Map<const Eigen::RowVectorXd> r(row.data(), static_cast<Eigen::Index>(row.size()));
    return forward(m, MatrixXd(r))(0);
}

/// mean(e^2) + weight_decay * |p|^2 in z-scored units.
inline double objective(const RegressorModel& m, const MatrixXd& x, const VectorXd& yz, double weight_decay)
{
    const VectorXd e = forward_scaled(m, x) - yz;
    const double reg = weight_decay > 0.0 ? weight_decay * m.parameters().squaredNorm() : 0.0;
    return e.squaredNorm() / static_cast<double>(e.size()) + reg;
}

/// Analytic gradient of `objective` by backpropagation.
inline VectorXd objective_gradient(const RegressorModel& m, const MatrixXd& x, const VectorXd& yz,
                                   double weight_decay)
{
    MatrixXd a;
    const VectorXd e = forward_scaled(m, x, &a) - yz;
    const VectorXd delta = e * (2.0 / static_cast<double>(e.size()));
    const MatrixXd dz = (delta * m.w_out.transpose()).array() * (1.0 - a.array().square());
    RegressorModel g = m;
    g.w_hidden = dz.transpose() * x;
    g.b_hidden = dz.colwise().sum().transpose();
    g.w_out = a.transpose() * delta;
    g.b_out = delta.sum();
    VectorXd grad = g.parameters();
    if (weight_decay > 0.0) {
        grad += 2.0 * weight_decay * m.parameters();
    }
    return grad;
}

/// d(output_i)/d(p), n x P.
inline MatrixXd output_jacobian(const RegressorModel& m, const MatrixXd& x)
{
    MatrixXd a;
    forward_scaled(m, x, &a);
    const Eigen::Index n = x.rows();
    const auto h = static_cast<Eigen::Index>(m.hidden());
    const auto d = static_cast<Eigen::Index>(m.input_dim());
    MatrixXd j(n, static_cast<Eigen::Index>(m.parameter_count()));
    const MatrixXd gz = (1.0 - a.array().square()).matrix() * m.w_out.asDiagonal();
    for (Eigen::Index k = 0; k < h; ++k) {
        j.block(0, k * d, n, d) = gz.col(k).asDiagonal() * x;
    }
    j.block(0, h * d, n, h) = gz;
    j.block(0, h * d + h, n, h) = a;
    j.col(h * d + 2 * h).setOnes();
    return j;
}

struct TrainConfig {
    Optimizer optimizer = Optimizer::LevenbergMarquardt;
    std::size_t max_epochs = 5000;
    std::size_t patience = 50;
    double weight_decay = 1e-4;
    // gradient descent
    double learning_rate = 0.01;
    double lr_grow = 1.05;
    double lr_shrink = 0.5;
    double momentum = 0.0;
    // Levenberg-Marquardt damping
    double mu_init = 1e-3;
    double mu_max = 1e10;
};

struct FineTuneConfig {
    std::size_t epochs = 200;
    double lr_factor = 0.1; ///< relative to TrainConfig::learning_rate
    double weight_decay = 0.0;
};

namespace detail {

inline void check_finite(double loss, std::size_t epoch)
{
    if (!std::isfinite(loss)) {
        throw NumericalError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
    }
}

/// One damped Gauss-Newton step on mean(e^2) + wd |p|^2:
/// dp = -(J^T J + lambda I)^{-1} v with v = J^T e + n wd p and lambda = mu + n wd.
inline VectorXd lm_step(const MatrixXd& j, const VectorXd& e, const VectorXd& p, double mu, double wd)
{
    const auto n = static_cast<double>(j.rows());
    const double lambda = mu + n * wd;
    const VectorXd v = j.transpose() * e + (n * wd) * p;
    if (j.rows() < j.cols()) {
        // Push-through identity keeps the solve at n x n when there are fewer rows than parameters.
        MatrixXd k = j * j.transpose();
        k.diagonal().array() += lambda;
        const Eigen::LLT<MatrixXd> llt(k);
        const VectorXd jv = j * v;
        return -(v - j.transpose() * llt.solve(jv)) / lambda;
    }
    MatrixXd a = j.transpose() * j;
    a.diagonal().array() += lambda;
    return -Eigen::LLT<MatrixXd>(a).solve(v);
}

} // namespace detail

/// Trains in place on standardised features and targets in metres. Stops when the
/// validation loss has not improved for `patience` epochs, or at max_epochs, and
/// restores the best-validation snapshot. Without validation rows the training
/// loss drives early stopping.
inline RegressorModel train(RegressorModel model, const MatrixXd& x_train, const VectorXd& y_train,
                            const MatrixXd& x_val, const VectorXd& y_val, const TrainConfig& cfg = {})
{
    if (x_train.rows() < 2 || x_train.rows() != y_train.size()) {
        throw ValidationError("training set needs at least 2 rows with matching targets");
    }
    if (x_val.rows() != y_val.size()) {
        throw ValidationError("validation features and targets differ in length");
    }
    if (!x_train.allFinite() || !y_train.allFinite() || !x_val.allFinite() || !y_val.allFinite()) {
        throw NumericalError("training data contains non-finite values");
    }
    const double mean = y_train.mean();
    double sd = std::sqrt((y_train.array() - mean).square().mean());
    if (!(sd > 0.0)) {
        sd = 1.0;
    }
    model.target = {mean, sd};
    const VectorXd yz = (y_train.array() - mean) / sd;
    const VectorXd yvz = (y_val.array() - mean) / sd;
    const bool have_val = x_val.rows() > 0;
    const double wd = cfg.weight_decay;

    auto val_loss = [&](const RegressorModel& m) {
        return have_val ? objective(m, x_val, yvz, 0.0) : objective(m, x_train, yz, 0.0);
    };

    TrainingMetadata& meta = model.metadata;
    meta.optimizer = optimizer_name(cfg.optimizer);
    meta.train_loss.clear();
    meta.val_loss.clear();
    VectorXd best = model.parameters();
    double best_val = val_loss(model);
    detail::check_finite(best_val, 0);
    meta.best_epoch = 0;
    std::size_t since_best = 0;

    double loss = objective(model, x_train, yz, wd);
    detail::check_finite(loss, 0);
    double mu = cfg.mu_init;
    double lr = cfg.learning_rate;
    VectorXd velocity = VectorXd::Zero(static_cast<Eigen::Index>(model.parameter_count()));
    std::size_t epoch = 0;
    while (epoch < cfg.max_epochs) {
        ++epoch;
        VectorXd p = model.parameters();
        if (cfg.optimizer == Optimizer::LevenbergMarquardt) {
            MatrixXd a;
            const VectorXd e = forward_scaled(model, x_train, &a) - yz;
            const MatrixXd j = output_jacobian(model, x_train);
            bool accepted = false;
            while (mu <= cfg.mu_max) {
                const VectorXd dp = detail::lm_step(j, e, p, mu, wd);
                model.set_parameters(p + dp);
                const double trial = objective(model, x_train, yz, wd);
                if (std::isfinite(trial) && trial < loss) {
                    loss = trial;
                    mu *= 0.1;
                    accepted = true;
                    break;
                }
                mu *= 10.0;
            }
            if (!accepted) {
                model.set_parameters(p);
                --epoch;
                break;
            }
        } else {
            const VectorXd g = objective_gradient(model, x_train, yz, wd);
            velocity = cfg.momentum * velocity - lr * g;
            model.set_parameters(p + velocity);
            const double trial = objective(model, x_train, yz, wd);
            detail::check_finite(trial, epoch);
            if (trial <= loss) {
                loss = trial;
                lr *= cfg.lr_grow;
            } else {
                model.set_parameters(p);
                velocity.setZero();
                lr *= cfg.lr_shrink;
            }
        }
        detail::check_finite(loss, epoch);
        meta.train_loss.push_back(objective(model, x_train, yz, 0.0));
        const double v = val_loss(model);
        detail::check_finite(v, epoch);
        meta.val_loss.push_back(v);
        if (v < best_val) {
            best_val = v;
            best = model.parameters();
            meta.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best > cfg.patience) {
            break;
        }
    }
    meta.epochs = epoch;
    model.set_parameters(best);
    if (!model.finite()) {
        throw NumericalError("trained model has non-finite weights");
    }
    return model;
}

/// Continues training from the current weights with plain adaptive gradient
/// descent at a reduced step for a fixed number of epochs. Target and feature
/// statistics are kept from the original fit.
inline RegressorModel fine_tune(RegressorModel model, const MatrixXd& x_adapt, const VectorXd& y_adapt,
                                const TrainConfig& base = {}, const FineTuneConfig& cfg = {})
{
    if (static_cast<std::size_t>(x_adapt.cols()) != model.input_dim()) {
        throw ValidationError("adaptation features do not match the model schema");
    }
    if (x_adapt.rows() < 10 || x_adapt.rows() != y_adapt.size()) {
        throw ValidationError("adaptation set needs at least 10 rows with matching targets");
    }
    if (!x_adapt.allFinite() || !y_adapt.allFinite()) {
        throw NumericalError("adaptation data contains non-finite values");
    }
    const VectorXd yz = (y_adapt.array() - model.target.mean) / model.target.std_dev;
    // the reduced step is a ceiling: it may shrink on a rejected step but never grows past it
    const double lr_max = base.learning_rate * cfg.lr_factor;
    double lr = lr_max;
    double loss = objective(model, x_adapt, yz, cfg.weight_decay);
    detail::check_finite(loss, 0);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const VectorXd p = model.parameters();
        model.set_parameters(p - lr * objective_gradient(model, x_adapt, yz, cfg.weight_decay));
        const double trial = objective(model, x_adapt, yz, cfg.weight_decay);
        detail::check_finite(trial, epoch);
        if (trial <= loss) {
            loss = trial;
            lr = std::min(lr * base.lr_grow, lr_max);
        } else {
            model.set_parameters(p);
            lr *= base.lr_shrink;
        }
    }
    model.metadata.fine_tune_epochs += cfg.epochs;
    return model;
}

struct EvalReport {
    double rmse_cm = 0.0;
    double mae_cm = 0.0;
    std::size_t n_samples = 0;
};

/// RMSE and MAE in centimetres of predictions against truth given in metres.
inline EvalReport evaluate(std::span<const double> y_hat, std::span<const double> y_true)
{
    if (y_hat.size() != y_true.size()) {
        throw ValidationError("prediction and truth lengths differ");
    }
    if (y_hat.empty()) {
        throw ValidationError("evaluation needs at least one sample");
    }
    double se = 0.0;
    double ae = 0.0;
    for (std::size_t i = 0; i < y_hat.size(); ++i) {
        const double e = (y_hat[i] - y_true[i]) * 100.0;
        se += e * e;
        ae += std::abs(e);
    }
    const auto n = static_cast<double>(y_hat.size());
    EvalReport r{std::sqrt(se / n), ae / n, y_hat.size()};
    if (!std::isfinite(r.rmse_cm) || !std::isfinite(r.mae_cm)) {
        throw NumericalError("non-finite evaluation error");
    }
    // Guard against rounding in the final digit when all errors are equal.
    if (r.rmse_cm < r.mae_cm) {
        r.rmse_cm = r.mae_cm;
    }
    return r;
}

/// Rows of a standardised matrix as an Eigen matrix.
inline MatrixXd to_matrix(const features::FeatureMatrix& fm, std::span<const std::size_t> rows)
{
    MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(fm.cols()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t c = 0; c < fm.cols(); ++c) {
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = fm.at(rows[i], c);
        }
    }
    return x;
}

/// Attaches the feature schema to a model so raw matrices can be predicted later.
inline void attach_schema(RegressorModel& m, const features::StandardizationStats& st)
{
    if (st.columns.size() != m.input_dim()) {
        throw ValidationError("standardisation columns do not match the model input dimension");
    }
    m.feature_stats = st;
    m.input_columns = st.columns;
    m.schema_hash = features::schema_hash(st.source_columns);
}

/// Predicts water level (m) for every row of an unstandardised feature matrix;
/// invalid rows yield NaN.
inline std::vector<double> predict(const RegressorModel& m, const features::FeatureMatrix& raw)
{
    if (features::schema_hash(raw.column_names) != m.schema_hash) {
        throw ValidationError("feature schema does not match the model (hash " +
                              features::schema_hash(raw.column_names) + " vs " + m.schema_hash + ")");
    }
    const auto fm = features::apply_standardize(m.feature_stats, raw);
    const auto rows = fm.valid_rows(0, fm.rows());
    const VectorXd y = forward(m, to_matrix(fm, rows));
    std::vector<double> out(fm.rows(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out[rows[i]] = y(static_cast<Eigen::Index>(i));
    }
    return out;
}

inline nlohmann::json to_json(const RegressorModel& m)
{
    using nlohmann::json;
    json hidden = json::array();
    for (Eigen::Index i = 0; i < m.w_hidden.rows(); ++i) {
        std::vector<double> row(m.w_hidden.row(i).begin(), m.w_hidden.row(i).end());
        hidden.push_back(row);
    }
    json j;
    j["schema_hash"] = m.schema_hash;
    j["input_columns"] = m.input_columns;
    j["weights"] = {{"hidden", hidden}, {"output", std::vector<double>(m.w_out.begin(), m.w_out.end())}};
    j["biases"] = {{"hidden", std::vector<double>(m.b_hidden.begin(), m.b_hidden.end())}, {"output", m.b_out}};
    j["target_stats"] = {{"mean", m.target.mean}, {"std", m.target.std_dev}};
    j["feature_stats"] = {{"source_columns", m.feature_stats.source_columns},
                          {"columns", m.feature_stats.columns},
                          {"mean", m.feature_stats.mean},
                          {"std", m.feature_stats.std_dev},
                          {"dropped", m.feature_stats.dropped}};
    const auto& md = m.metadata;
    j["metadata"] = {{"seed", md.seed},
                     {"optimizer", md.optimizer},
                     {"epochs", md.epochs},
                     {"best_epoch", md.best_epoch},
                     {"fine_tune_epochs", md.fine_tune_epochs},
                     {"train_loss", md.train_loss},
                     {"val_loss", md.val_loss},
                     {"hidden_units", m.hidden()},
                     {"activation", "tanh"}};
    return j;
}

inline RegressorModel from_json(const nlohmann::json& j)
{
    RegressorModel m;
    try {
        m.schema_hash = j.at("schema_hash").get<std::string>();
        m.input_columns = j.at("input_columns").get<std::vector<std::string>>();
        const auto hidden = j.at("weights").at("hidden").get<std::vector<std::vector<double>>>();
        const auto w_out = j.at("weights").at("output").get<std::vector<double>>();
        const auto b_hidden = j.at("biases").at("hidden").get<std::vector<double>>();
        m.b_out = j.at("biases").at("output").get<double>();
        m.target.mean = j.at("target_stats").at("mean").get<double>();
        m.target.std_dev = j.at("target_stats").at("std").get<double>();
        const auto& fs = j.at("feature_stats");
        m.feature_stats.source_columns = fs.at("source_columns").get<std::vector<std::string>>();
        m.feature_stats.columns = fs.at("columns").get<std::vector<std::string>>();
        m.feature_stats.mean = fs.at("mean").get<std::vector<double>>();
        m.feature_stats.std_dev = fs.at("std").get<std::vector<double>>();
        m.feature_stats.dropped = fs.at("dropped").get<std::vector<std::string>>();
        const auto& md = j.at("metadata");
        m.metadata.seed = md.at("seed").get<std::uint64_t>();
        m.metadata.optimizer = md.at("optimizer").get<std::string>();
        m.metadata.epochs = md.at("epochs").get<std::size_t>();
        m.metadata.best_epoch = md.at("best_epoch").get<std::size_t>();
        m.metadata.fine_tune_epochs = md.value("fine_tune_epochs", std::size_t{0});
        m.metadata.train_loss = md.at("train_loss").get<std::vector<double>>();
        m.metadata.val_loss = md.at("val_loss").get<std::vector<double>>();

        const std::size_t h = hidden.size();
        const std::size_t d = m.input_columns.size();
        if (h == 0 || d == 0 || w_out.size() != h || b_hidden.size() != h) {
            throw ValidationError("model file: inconsistent layer sizes");
        }
        if (m.feature_stats.columns != m.input_columns || m.feature_stats.mean.size() != d ||
            m.feature_stats.std_dev.size() != d) {
            throw ValidationError("model file: feature statistics do not match input columns");
        }
        m.w_hidden.resize(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < h; ++i) {
            if (hidden[i].size() != d) {
                throw ValidationError("model file: hidden weight row " + std::to_string(i) + " has wrong length");
            }
            for (std::size_t c = 0; c < d; ++c) {
                m.w_hidden(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = hidden[i][c];
            }
        }
        m.w_out = Eigen::Map<const VectorXd>(w_out.data(), static_cast<Eigen::Index>(h));
        m.b_hidden = Eigen::Map<const VectorXd>(b_hidden.data(), static_cast<Eigen::Index>(h));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("model file: ") + e.what());
    }
    if (features::schema_hash(m.feature_stats.source_columns) != m.schema_hash) {
        throw ValidationError("model file: schema hash does not match the stored feature columns");
    }
    if (!m.finite()) {
        throw ValidationError("model file: non-finite parameters");
    }
    return m;
}

inline void save_model(const RegressorModel& m, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write model file '" + path + "'");
    }
    out << to_json(m).dump(2) << '\n';
    if (!out) {
        throw IoError("failed writing model file '" + path + "'");
    }
}

inline RegressorModel load_model(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open model file '" + path + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("model file '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
}

} // namespace tidewave::regressor
