// tidewave: command-line front end for the tide-from-LTE-power pipeline.
//
//   tidewave [--seed N] [--config FILE] [--out-dir DIR] <command> [args]
//
// Every command writes <command>.manifest.json into the output directory with
// the effective configuration, the seed and SHA-256 hashes of inputs and outputs.
// Passing a manifest back through --config reproduces the run.
//
// Exit codes: 0 ok, 1 validation error, 2 I/O error, 3 numerical failure.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tidewave/tidewave.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tidewave;

namespace {

constexpr const char* kVersion = "tidewave 0.1.0";

json default_config()
{
    const auto g = sim::LinkGeometry::river_link_420m();
    return {
        {"seed", 42},
        {"geometry",
         {{"tx_height_m", g.tx_height},
          {"rx_heights_m", g.rx_heights},
          {"range_m", g.range},
          {"carrier_mhz", g.carrier_freq / 1e6}}},
        {"reflection", {{"magnitude", 1.0}, {"phase_rad", std::numbers::pi}}},
        {"simulate",
         {{"start_s", 0.0},
          {"duration_s", 25200.0},
          {"dt_s", 6.0},
          {"tide_period_s", 12.6 * 3600.0},
          {"tide_amplitude_m", 0.5},
          {"tide_mean_m", 0.0},
          {"tide_phase_rad", 0.0},
          {"noise_db", 1.0},
          {"base_power_dbm", -80.0},
          {"path", "exact"},
          {"cell_id", "cell0"}}},
        {"ingest",
         {{"dt_s", 60.0},
          {"max_gap_s", nullptr},
          {"iqr_k", 1.0},
          {"hampel_half", 5},
          {"hampel_n_mad", 3.0},
          {"lowpass_period_s", nullptr}}},
        {"wavelet",
         {{"f0", 6.0 / (2.0 * std::numbers::pi)},
          {"f_min_hz", 1.0 / 7200.0},
          {"f_max_hz", 1.0 / 600.0},
          {"voices", 8},
          {"metric", "rsrp"},
          {"antenna", nullptr}}},
        {"detector", {{"look_back_s", 2700.0}, {"look_ahead_s", 300.0}, {"refractory_s", 300.0}, {"coi_only", false}}},
        {"fusion",
         {{"window_s", 9.0 * 3600.0},
          {"min_samples", 10},
          {"trailing", false},
          {"grid_dt_s", 60.0},
          {"max_lag_s", 0.0}}},
        {"features", {{"tide_period_s", 12.6 * 3600.0}, {"phase_origin_s", nullptr}}},
        {"split", {{"train", 0.60}, {"val", 0.05}, {"test", 0.35}}},
        {"trainer",
         {{"optimizer", "levenberg_marquardt"},
          {"hidden", 40},
          {"max_epochs", 5000},
          {"patience", 50},
          {"weight_decay", 1e-4},
          {"learning_rate", 0.01},
          {"momentum", 0.0}}},
        {"fine_tune", {{"epochs", 200}, {"lr_factor", 0.1}, {"adapt_frac", 0.10}}},
    };
}

/// Overlays `patch` onto `base`, rejecting keys absent from `base` and type changes.
/// Keys whose default is null accept a number.
void merge_checked(json& base, const json& patch, const std::string& path)
{
    if (!patch.is_object()) {
        throw ValidationError("config: '" + path + "' must be an object");
    }
    for (const auto& [key, value] : patch.items()) {
        const std::string where = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) {
            throw ValidationError("config: unknown key '" + where + "'");
        }
        json& slot = base[key];
        if (slot.is_object()) {
            merge_checked(slot, value, where);
            continue;
        }
        const bool ok = value.is_null() || (slot.is_null() && value.is_number()) ||
                        (slot.is_number() && value.is_number()) || (slot.is_string() && value.is_string()) ||
                        (slot.is_boolean() && value.is_boolean()) ||
                        (slot.is_array() && value.is_array() &&
                         std::all_of(value.begin(), value.end(), [](const json& v) { return v.is_number(); }));
        if (!ok) {
            throw ValidationError("config: wrong type for '" + where + "'");
        }
        if (value.is_null() && !slot.is_null()) {
            throw ValidationError("config: '" + where + "' cannot be null");
        }
        slot = value;
    }
}

double num(const json& cfg, const char* section, const char* key)
{
    return cfg.at(section).at(key).get<double>();
}

std::optional<double> opt_num(const json& cfg, const char* section, const char* key)
{
    const auto& v = cfg.at(section).at(key);
    return v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
}

std::size_t count(const json& cfg, const char* section, const char* key)
{
    const double v = num(cfg, section, key);
    if (v < 0 || v != std::floor(v)) {
        throw ValidationError(std::string("config: ") + section + "." + key + " must be a non-negative integer");
    }
    return static_cast<std::size_t>(v);
}

sim::LinkGeometry geometry_from(const json& cfg)
{
    sim::LinkGeometry g;
    g.tx_height = num(cfg, "geometry", "tx_height_m");
    g.rx_heights = cfg.at("geometry").at("rx_heights_m").get<std::vector<double>>();
    g.range = num(cfg, "geometry", "range_m");
    g.carrier_freq = num(cfg, "geometry", "carrier_mhz") * 1e6;
    g.validate();
    return g;
}

ingest::IngestConfig ingest_from(const json& cfg)
{
    ingest::IngestConfig c;
    c.dt = num(cfg, "ingest", "dt_s");
    c.max_gap = opt_num(cfg, "ingest", "max_gap_s").value_or(0.0);
    c.iqr_k = num(cfg, "ingest", "iqr_k");
    c.hampel_half = count(cfg, "ingest", "hampel_half");
    c.hampel_n_mad = num(cfg, "ingest", "hampel_n_mad");
    c.lowpass_period = opt_num(cfg, "ingest", "lowpass_period_s");
    if (!(c.dt > 0.0)) {
        throw ValidationError("ingest.dt_s must be positive");
    }
    return c;
}

Metric parse_metric(const std::string& s)
{
    for (Metric m : kAllMetrics) {
        if (metric_name(m) == s) {
            return m;
        }
    }
    throw ValidationError("unknown metric '" + s + "'");
}

pipeline::AnalysisConfig analysis_from(const json& cfg)
{
    pipeline::AnalysisConfig a;
    a.wavelet.center_freq = num(cfg, "wavelet", "f0");
    a.f_min = num(cfg, "wavelet", "f_min_hz");
    a.f_max = num(cfg, "wavelet", "f_max_hz");
    a.voices = static_cast<int>(count(cfg, "wavelet", "voices"));
    a.metric = parse_metric(cfg.at("wavelet").at("metric").get<std::string>());
    if (const auto ant = opt_num(cfg, "wavelet", "antenna")) {
        a.antenna = static_cast<std::size_t>(*ant);
    }
    return a;
}

detector::DetectorConfig detector_from(const json& cfg)
{
    detector::DetectorConfig d;
    d.look_back = num(cfg, "detector", "look_back_s");
    d.look_ahead = num(cfg, "detector", "look_ahead_s");
    d.refractory = num(cfg, "detector", "refractory_s");
    d.validate();
    return d;
}

fusion::FusionConfig fusion_from(const json& cfg)
{
    fusion::FusionConfig f;
    f.standardize.window = num(cfg, "fusion", "window_s");
    f.standardize.min_samples = count(cfg, "fusion", "min_samples");
    f.standardize.trailing = cfg.at("fusion").at("trailing").get<bool>();
    f.grid_dt = num(cfg, "fusion", "grid_dt_s");
    f.max_lag = num(cfg, "fusion", "max_lag_s");
    return f;
}

regressor::TrainConfig trainer_from(const json& cfg)
{
    regressor::TrainConfig t;
    t.optimizer = regressor::parse_optimizer(cfg.at("trainer").at("optimizer").get<std::string>());
    t.max_epochs = count(cfg, "trainer", "max_epochs");
    t.patience = count(cfg, "trainer", "patience");
    t.weight_decay = num(cfg, "trainer", "weight_decay");
    t.learning_rate = num(cfg, "trainer", "learning_rate");
    t.momentum = num(cfg, "trainer", "momentum");
    return t;
}

std::string sha256_file(const std::string& path)
{
    auto in = csv::open_for_read(path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw IoError("sha256 initialisation failed");
    }
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) {
            EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
        }
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

/// Output bookkeeping for one command run.
class Run {
public:
    Run(std::string command, json config, fs::path out_dir)
        : command_(std::move(command)), config_(std::move(config)), out_dir_(std::move(out_dir))
    {
        std::error_code ec;
        fs::create_directories(out_dir_, ec);
        if (ec) {
            throw IoError("cannot create output directory '" + out_dir_.string() + "': " + ec.message());
        }
    }

    const json& config() const { return config_; }
    std::uint64_t seed() const { return config_.at("seed").get<std::uint64_t>(); }

    void input(const std::string& path) { inputs_.push_back(path); }
    void arg(const std::string& key, json value) { args_[key] = std::move(value); }

    std::string path(const std::string& name) const { return (out_dir_ / name).string(); }

    /// Registers an output written by other means.
    void record(const std::string& name) { outputs_.push_back(name); }

    std::ofstream create(const std::string& name)
    {
        outputs_.push_back(name);
        return csv::open_for_write(path(name));
    }

    void finish()
    {
        json m;
        m["tool"] = kVersion;
        m["command"] = command_;
        m["seed"] = seed();
        m["args"] = args_;
        m["config"] = config_;
        json in = json::object();
        for (const auto& p : inputs_) {
            in[p] = sha256_file(p);
        }
        json out = json::object();
        for (const auto& p : outputs_) {
            out[p] = sha256_file(path(p));
        }
        m["inputs"] = in;
        m["outputs"] = out;
        auto f = csv::open_for_write(path(command_ + ".manifest.json"));
        f << m.dump(2) << '\n';
        if (!f) {
            throw IoError("failed writing manifest");
        }
    }

private:
    std::string command_;
    json config_;
    fs::path out_dir_;
    std::vector<std::string> inputs_;
    std::vector<std::string> outputs_;
    json args_ = json::object();
};

std::string stem_without(const std::string& path, const std::string& prefix)
{
    std::string s = fs::path(path).stem().string();
    if (s.rfind(prefix, 0) == 0 && s.size() > prefix.size()) {
        s = s.substr(prefix.size());
    }
    return s;
}

std::string safe_name(const std::string& id)
{
    std::string out;
    for (char c : id) {
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    }
    return out.empty() ? "cell" : out;
}

/// Reads an S(b) file written by analyze (s_value) or fuse (s_fused).
cwt::TideBandFeature read_any_feature(const std::string& path)
{
    auto in = csv::open_for_read(path);
    std::string header;
    std::getline(in, header);
    in.seekg(0);
    if (header.rfind("t_unix_s,s_fused", 0) == 0) {
        return fusion::read_fused_csv(in).as_feature();
    }
    auto f = cwt::read_feature_csv(in);
    f.provenance = stem_without(path, "s_");
    return f;
}

svg::Chart feature_chart(const cwt::TideBandFeature& f, const std::vector<detector::DetectionEvent>& events,
                         const std::string& title)
{
    svg::Chart c;
    c.title = title;
    c.y_label = "S(b)";
    c.provenance = "tidewave S(b) of " + f.provenance;
    const double t0 = f.times.empty() ? 0.0 : f.times.front();
    svg::Series s{"S(b)", {}, {}, "#1f77b4"};
    for (std::size_t i = 0; i < f.times.size(); ++i) {
        s.x.push_back((f.times[i] - t0) / 3600.0);
        s.y.push_back(f.values[i]);
    }
    c.series.push_back(std::move(s));
    for (const auto& e : events) {
        const bool flow = e.kind == detector::EventKind::MaxFlow;
        c.markers.push_back({(e.time - t0) / 3600.0, e.value, flow, flow ? "#000000" : "#d62728"});
    }
    return c;
}

void write_events(Run& run, const std::string& name, const std::vector<detector::DetectionEvent>& events)
{
    auto f = run.create(name);
    detector::write_events_jsonl(f, events);
}

std::vector<detector::DetectionEvent> read_events_jsonl(const std::string& path)
{
    auto in = csv::open_for_read(path);
    std::vector<detector::DetectionEvent> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            const json j = json::parse(line);
            detector::DetectionEvent e;
            e.time = j.at("t").get<double>();
            const auto kind = j.at("kind").get<std::string>();
            if (kind != "high_low" && kind != "max_flow") {
                throw ValidationError("unknown event kind");
            }
            e.kind = kind == "high_low" ? detector::EventKind::HighLowWater : detector::EventKind::MaxFlow;
            e.value = j.at("s_value").get<double>();
            e.emit_time = j.at("emitted_at").get<double>();
            out.push_back(e);
        } catch (const std::exception& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": bad event line (" + e.what() + ")");
        }
    }
    return out;
}

// ---- commands ---------------------------------------------------------------

void cmd_simulate(Run& run)
{
    const json& cfg = run.config();
    const auto g = geometry_from(cfg);
    sim::ReflectionModel refl;
    refl.magnitude = num(cfg, "reflection", "magnitude");
    refl.phase = num(cfg, "reflection", "phase_rad");
    const double start = num(cfg, "simulate", "start_s");
    const double duration = num(cfg, "simulate", "duration_s");
    const double dt = num(cfg, "simulate", "dt_s");
    if (!(duration > 0.0) || !(dt > 0.0)) {
        throw ValidationError("simulate: duration and dt must be positive");
    }
    const auto grid = sim::uniform_grid(start, start + duration, dt);
    sim::TideParams tp;
    tp.period = num(cfg, "simulate", "tide_period_s");
    tp.amplitude = num(cfg, "simulate", "tide_amplitude_m");
    tp.mean = num(cfg, "simulate", "tide_mean_m");
    tp.phase = num(cfg, "simulate", "tide_phase_rad");
    const auto tide = sim::synth_tide(tp, grid);
    sim::SimulationOptions so;
    so.cell_id = cfg.at("simulate").at("cell_id").get<std::string>();
    const auto path = cfg.at("simulate").at("path").get<std::string>();
    if (path != "exact" && path != "linearized") {
        throw ValidationError("simulate.path must be 'exact' or 'linearized'");
    }
    so.path = path == "exact" ? sim::PathModel::Exact : sim::PathModel::Linearized;
    so.base_power_dbm.assign(g.antenna_count(), num(cfg, "simulate", "base_power_dbm"));
    so.noise_std_db = num(cfg, "simulate", "noise_db");
    so.seed = run.seed();
    const auto series = sim::simulate_metric_series(g, tide, refl, so);
    {
        auto f = run.create("tide.csv");
        sim::write_tide_csv(f, tide);
    }
    {
        auto f = run.create("metrics.csv");
        write_series_csv(f, series);
    }
    {
        auto f = run.create("raw_log.csv");
        ingest::write_records_csv(f, ingest::series_to_records(series));
    }
    if (!g.far_field_ok() && so.path == sim::PathModel::Linearized) {
        std::cerr << "warning: range is below 10x the antenna heights; the linearised path difference is coarse\n";
    }
}

void cmd_preprocess(Run& run, const std::string& raw_path)
{
    run.input(raw_path);
    const auto cfg = ingest_from(run.config());
    auto in = csv::open_for_read(raw_path);
    auto parsed = ingest::parse_records(in);
    for (const auto& issue : parsed.issues) {
        std::cerr << raw_path << ":" << issue.line << ": " << issue.message << '\n';
    }
    if (!parsed.issues.empty()) {
        throw ValidationError(std::to_string(parsed.issues.size()) + " malformed row(s) in " + raw_path);
    }
    const std::size_t total = parsed.records.size();
    auto res = ingest::preprocess(std::move(parsed.records), cfg);
    if (res.report.iqr_insufficient_channels > 0) {
        std::cerr << "warning: " << res.report.iqr_insufficient_channels
                  << " channel(s) had fewer than 4 values; IQR test skipped\n";
    }
    for (const auto& s : res.series) {
        const std::string name = "series_" + safe_name(s.cell_id);
        {
            auto f = run.create(name + ".csv");
            write_series_csv(f, s);
        }
        json side;
        side["dt"] = s.dt;
        side["max_gap"] = cfg.max_gap > 0.0 ? cfg.max_gap : 3.0 * cfg.dt;
        side["masked_fraction"] = s.masked_fraction();
        side["dropped_rows"] = res.report.dropped_rows;
        side["input_rows"] = total;
        side["iqr_flagged"] = res.report.iqr_flagged;
        side["hampel_replaced"] = res.report.hampel_replaced;
        auto f = run.create(name + ".json");
        f << side.dump(2) << '\n';
    }
}

void cmd_analyze(Run& run, const std::string& series_path)
{
    run.input(series_path);
    const json& cfg = run.config();
    const auto acfg = analysis_from(cfg);
    const auto dcfg = detector_from(cfg);
    auto in = csv::open_for_read(series_path);
    const auto series = read_series_csv(in);
    const auto analysis = pipeline::analyze_cell(series, acfg);
    const std::string id = safe_name(series.cell_id);
    {
        auto f = run.create("s_" + id + ".csv");
        cwt::write_feature_csv(f, analysis.feature);
    }
    {
        auto fs_ = run.create("scales.csv");
        auto ft = run.create("times.csv");
        auto fm = run.create("coeffs_mag.csv");
        cwt::write_scalogram_csv(fs_, ft, fm, analysis.scalogram);
    }
    {
        json meta;
        meta["cell_id"] = series.cell_id;
        meta["f0"] = acfg.wavelet.center_freq;
        meta["f_min_hz"] = acfg.f_min;
        meta["f_max_hz"] = acfg.f_max;
        meta["voices"] = acfg.voices;
        meta["scale_count"] = analysis.scalogram.scale_count();
        meta["time_count"] = analysis.scalogram.time_count();
        meta["dt_s"] = analysis.scalogram.dt;
        meta["layout"] = "coeffs_mag.csv rows follow scales.csv, columns follow times.csv";
        auto f = run.create("scalogram.json");
        f << meta.dump(2) << '\n';
    }
    const bool coi_only = cfg.at("detector").at("coi_only").get<bool>();
    const auto det = detector::detect_offline(analysis.feature, dcfg, coi_only);
    write_events(run, "events_" + id + ".jsonl", det.events);
    {
        auto f = run.create("scalogram_" + id + ".svg");
        svg::write_scalogram(f, analysis.scalogram, "Scalogram |W| (" + series.cell_id + ")",
                             "tidewave analyze " + fs::path(series_path).filename().string());
    }
    {
        auto f = run.create("s_" + id + ".svg");
        svg::write_chart(f, feature_chart(analysis.feature, det.events, "Summed tide-band coefficient"));
    }
}

void cmd_detect(Run& run, const std::string& feature_path)
{
    run.input(feature_path);
    const auto f = read_any_feature(feature_path);
    const auto det = detector::detect_offline(f, detector_from(run.config()),
                                              run.config().at("detector").at("coi_only").get<bool>());
    write_events(run, "events.jsonl", det.events);
    std::cerr << det.events.size() << " event(s), " << det.counters.gap_resets << " gap reset(s)\n";
}

void cmd_fuse(Run& run, const std::vector<std::string>& paths)
{
    std::vector<cwt::TideBandFeature> cells;
    for (const auto& p : paths) {
        run.input(p);
        cells.push_back(read_any_feature(p));
    }
    const auto res = fusion::fuse(cells, fusion_from(run.config()));
    {
        auto f = run.create("fused.csv");
        fusion::write_fused_csv(f, res.fused);
    }
    const auto feature = res.fused.as_feature();
    const auto det = detector::detect_offline(feature, detector_from(run.config()));
    write_events(run, "events_fused.jsonl", det.events);
    json lags = json::array();
    for (std::size_t l = 0; l < res.lags.size(); ++l) {
        lags.push_back({{"cell", res.fused.cell_ids[l]},
                        {"shift", res.lags[l].applied()},
                        {"correlation", std::isfinite(res.lags[l].correlation) ? json(res.lags[l].correlation)
                                                                               : json(nullptr)},
                        {"mad_zero_masked", res.standardized[l].mad_zero}});
    }
    auto f = run.create("fusion_report.json");
    f << json{{"cells", lags}}.dump(2) << '\n';
}

void cmd_features(Run& run, const std::string& series_path, const std::string& fused_path,
                  const std::string& events_path)
{
    run.input(series_path);
    const json& cfg = run.config();
    auto in = csv::open_for_read(series_path);
    const auto series = read_series_csv(in).converted(Domain::Linear);
    std::optional<fusion::FusedFeature> fused;
    if (!fused_path.empty()) {
        run.input(fused_path);
        auto fin = csv::open_for_read(fused_path);
        const auto raw = fusion::read_fused_csv(fin);
        // Align by timestamp onto the series grid; absent times are unavailable.
        fusion::FusedFeature aligned;
        aligned.cell_ids = raw.cell_ids;
        aligned.times = series.times;
        aligned.values.assign(series.size(), stats::kNaN);
        aligned.contributing_count.assign(series.size(), 0);
        aligned.availability.assign(raw.cell_ids.size(), std::vector<bool>(series.size(), false));
        std::map<long long, std::size_t> index;
        for (std::size_t i = 0; i < raw.times.size(); ++i) {
            index[std::llround(raw.times[i] * 1000.0)] = i;
        }
        for (std::size_t i = 0; i < series.size(); ++i) {
            const auto it = index.find(std::llround(series.times[i] * 1000.0));
            if (it == index.end()) {
                continue;
            }
            aligned.values[i] = raw.values[it->second];
            aligned.contributing_count[i] = raw.contributing_count[it->second];
            for (std::size_t l = 0; l < raw.cell_ids.size(); ++l) {
                aligned.availability[l][i] = raw.availability[l][it->second];
            }
        }
        fused = std::move(aligned);
    }
    std::optional<double> origin = opt_num(cfg, "features", "phase_origin_s");
    if (!events_path.empty()) {
        run.input(events_path);
        const auto events = read_events_jsonl(events_path);
        origin = features::phase_origin(series.times.front(), events);
    }
    const auto fm = pipeline::build_feature_matrix(series, num(cfg, "features", "tide_period_s"), origin,
                                                   fused ? &*fused : nullptr);
    auto f = run.create("features.csv");
    features::write_feature_csv(f, fm);
    std::cerr << fm.cols() << " feature columns, " << fm.valid_rows(0, fm.rows()).size() << "/" << fm.rows()
              << " valid rows\n";
}

json report_json(const regressor::EvalReport& r)
{
    return {{"rmse_cm", r.rmse_cm}, {"mae_cm", r.mae_cm}, {"n_samples", r.n_samples}};
}

void write_predictions(Run& run, const std::string& name, const features::FeatureMatrix& fm,
                       const std::vector<double>& y_hat, const std::vector<double>* y_true)
{
    auto f = run.create(name);
    if (y_true) {
        csv::write_row(f, {"t_unix_s", "y_true_m", "y_hat_m"});
    } else {
        csv::write_row(f, {"t_unix_s", "y_hat_m"});
    }
    for (std::size_t r = 0; r < fm.rows(); ++r) {
        const std::string yh = std::isfinite(y_hat[r]) ? csv::format_double(y_hat[r]) : "";
        if (y_true) {
            csv::write_row(f, {csv::format_double(fm.times[r]), csv::format_double((*y_true)[r]), yh});
        } else {
            csv::write_row(f, {csv::format_double(fm.times[r]), yh});
        }
    }
}

features::FeatureMatrix load_features(Run& run, const std::string& path)
{
    run.input(path);
    auto in = csv::open_for_read(path);
    return features::read_feature_csv(in);
}

sim::TideSeries load_tide(Run& run, const std::string& path)
{
    run.input(path);
    auto in = csv::open_for_read(path);
    return sim::read_tide_csv(in);
}

void cmd_train(Run& run, const std::string& features_path, const std::string& tide_path,
               const std::string& fine_tune_from)
{
    const json& cfg = run.config();
    const auto fm = load_features(run, features_path);
    const auto y = pipeline::targets_at(load_tide(run, tide_path), fm.times);
    const auto tcfg = trainer_from(cfg);
    json report;
    if (!fine_tune_from.empty()) {
        run.input(fine_tune_from);
        const auto base = regressor::load_model(fine_tune_from);
        regressor::FineTuneConfig ft;
        ft.epochs = count(cfg, "fine_tune", "epochs");
        ft.lr_factor = num(cfg, "fine_tune", "lr_factor");
        const auto res = pipeline::adapt(base, fm, y, num(cfg, "fine_tune", "adapt_frac"), tcfg, ft);
        run.record("model.json");
        regressor::save_model(res.model, run.path("model.json"));
        write_predictions(run, "predictions.csv", fm, res.predictions, &y);
        report["mode"] = "fine_tune";
        report["adapt_rows"] = res.adapt_rows;
        report["test"] = report_json(res.test);
    } else {
        pipeline::FitOptions fo;
        fo.train_frac = num(cfg, "split", "train");
        fo.val_frac = num(cfg, "split", "val");
        fo.test_frac = num(cfg, "split", "test");
        fo.hidden = count(cfg, "trainer", "hidden");
        fo.seed = run.seed();
        fo.train = tcfg;
        const auto res = pipeline::fit(fm, y, fo);
        run.record("model.json");
        regressor::save_model(res.model, run.path("model.json"));
        write_predictions(run, "predictions.csv", fm, res.predictions, &y);
        report["mode"] = "train";
        report["split"] = {{"train_rows", res.plan.train_size()},
                           {"val_rows", res.plan.val_size()},
                           {"test_rows", res.plan.test_size()}};
        report["epochs"] = res.model.metadata.epochs;
        report["best_epoch"] = res.model.metadata.best_epoch;
        report["train"] = report_json(res.train_report);
        if (!res.rows.test.empty()) {
            report["test"] = report_json(res.test);
        }
    }
    auto f = run.create("train_report.json");
    f << report.dump(2) << '\n';
    if (report.contains("test")) {
        std::cerr << "test RMSE " << report["test"]["rmse_cm"].get<double>() << " cm, MAE "
                  << report["test"]["mae_cm"].get<double>() << " cm\n";
    }
}

void cmd_predict(Run& run, const std::string& features_path, const std::string& model_path,
                 const std::string& tide_path)
{
    const auto fm = load_features(run, features_path);
    run.input(model_path);
    const auto model = regressor::load_model(model_path);
    const auto y_hat = regressor::predict(model, fm);
    if (!tide_path.empty()) {
        const auto y = pipeline::targets_at(load_tide(run, tide_path), fm.times);
        write_predictions(run, "predictions.csv", fm, y_hat, &y);
    } else {
        write_predictions(run, "predictions.csv", fm, y_hat, nullptr);
    }
}

void cmd_evaluate(Run& run, const std::string& pred_path, double start_frac)
{
    run.input(pred_path);
    const auto table = csv::read_file(pred_path);
    const auto tc = table.column("y_true_m");
    const auto hc = table.column("y_hat_m");
    if (!tc || !hc) {
        throw ValidationError("evaluate: predictions need y_true_m and y_hat_m columns");
    }
    if (start_frac < 0.0 || start_frac >= 1.0) {
        throw ValidationError("evaluate: start fraction must lie in [0, 1)");
    }
    const auto first = static_cast<std::size_t>(std::floor(start_frac * static_cast<double>(table.rows.size()) + 1e-9));
    std::vector<double> y_hat;
    std::vector<double> y_true;
    for (std::size_t r = first; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (row.size() != table.header.size()) {
            throw ValidationError("evaluate: wrong column count at line " + std::to_string(table.line_numbers[r]));
        }
        const auto a = csv::parse_double(row[*hc]);
        const auto b = csv::parse_double(row[*tc]);
        if (a && b && std::isfinite(*a) && std::isfinite(*b)) {
            y_hat.push_back(*a);
            y_true.push_back(*b);
        }
    }
    const auto rep = regressor::evaluate(y_hat, y_true);
    auto f = run.create("report.json");
    f << report_json(rep).dump(2) << '\n';
    std::cout << "RMSE " << rep.rmse_cm << " cm, MAE " << rep.mae_cm << " cm over " << rep.n_samples << " samples\n";
}

void cmd_plot(Run& run, const std::string& path, const std::string& events_path, std::string title)
{
    run.input(path);
    const auto table = csv::read_file(path);
    const std::string base = fs::path(path).stem().string();
    svg::Chart chart;
    chart.provenance = "tidewave plot " + fs::path(path).filename().string();
    auto col = [&](std::size_t c) {
        std::vector<double> v;
        for (const auto& row : table.rows) {
            const auto x = c < row.size() ? csv::parse_double(row[c]) : std::nullopt;
            v.push_back(x ? *x : stats::kNaN);
        }
        return v;
    };
    const auto t = col(0);
    const double t0 = t.empty() ? 0.0 : t.front();
    std::vector<double> hours;
    for (double v : t) {
        hours.push_back((v - t0) / 3600.0);
    }
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
    std::vector<detector::DetectionEvent> events;
    if (!events_path.empty()) {
        run.input(events_path);
        events = read_events_jsonl(events_path);
    }
    if (table.column("s_value") || table.column("s_fused")) {
        const std::size_t c = table.column("s_value") ? *table.column("s_value") : *table.column("s_fused");
        cwt::TideBandFeature f;
        f.times = t;
        f.values = col(c);
        f.provenance = base;
        chart = feature_chart(f, events, title.empty() ? "Summed tide-band coefficient" : title);
    } else if (table.column("y_hat_m")) {
        chart.title = title.empty() ? "Water level" : title;
        chart.y_label = "water level (m)";
        if (const auto c = table.column("y_true_m")) {
            chart.series.push_back({"reference", hours, col(*c), "#444444"});
        }
        chart.series.push_back({"estimate", hours, col(*table.column("y_hat_m")), "#d62728"});
    } else if (table.column("h_m")) {
        chart.title = title.empty() ? "Tide" : title;
        chart.y_label = "h (m)";
        chart.series.push_back({"h", hours, col(*table.column("h_m")), "#1f77b4"});
    } else {
        std::size_t k = 0;
        for (std::size_t c = 1; c < table.header.size(); ++c) {
            if (table.header[c].find("_rsrp_") != std::string::npos) {
                chart.series.push_back({table.header[c], hours, col(c), palette[k++ % 6]});
            }
        }
        if (chart.series.empty()) {
            throw ValidationError("plot: unrecognised file layout in " + path);
        }
        chart.title = title.empty() ? "RSRP per antenna" : title;
        chart.y_label = "RSRP (dBm)";
    }
    chart.provenance = "tidewave plot " + fs::path(path).filename().string();
    auto f = run.create(base + ".svg");
    svg::write_chart(f, chart);
}

int exit_code_for(const std::exception& e)
{
    if (dynamic_cast<const IoError*>(&e)) {
        return 2;
    }
    if (dynamic_cast<const NumericalError*>(&e)) {
        return 3;
    }
    return 1;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Water level and tide-turn estimation from LTE downlink power metrics", "tidewave"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    std::uint64_t seed = 42;
    std::string config_path;
    std::string out_dir = ".";
    auto* seed_opt = app.add_option("--seed", seed, "Random seed (default 42)");
    app.add_option("--config", config_path, "JSON config file or a previous run manifest");
    app.add_option("--out-dir", out_dir, "Output directory");

    // Flag overrides: section/key pairs filled from optional CLI values.
    std::vector<std::pair<json::json_pointer, std::function<std::optional<json>()>>> overrides;
    auto num_flag = [&](CLI::App* sub, const std::string& flag, const std::string& pointer, const std::string& help) {
        auto holder = std::make_shared<std::optional<double>>();
        sub->add_option(flag, *holder, help);
        overrides.emplace_back(json::json_pointer(pointer), [holder]() -> std::optional<json> {
            return *holder ? std::optional<json>(**holder) : std::nullopt;
        });
    };
    auto str_flag = [&](CLI::App* sub, const std::string& flag, const std::string& pointer, const std::string& help) {
        auto holder = std::make_shared<std::optional<std::string>>();
        sub->add_option(flag, *holder, help);
        overrides.emplace_back(json::json_pointer(pointer), [holder]() -> std::optional<json> {
            return *holder ? std::optional<json>(**holder) : std::nullopt;
        });
    };
    auto bool_flag = [&](CLI::App* sub, const std::string& flag, const std::string& pointer, const std::string& help) {
        auto holder = std::make_shared<bool>(false);
        sub->add_flag(flag, *holder, help);
        overrides.emplace_back(json::json_pointer(pointer), [holder]() -> std::optional<json> {
            return *holder ? std::optional<json>(true) : std::nullopt;
        });
    };
    auto detector_flags = [&](CLI::App* sub) {
        num_flag(sub, "--look-back", "/detector/look_back_s", "Detector look-back window (s)");
        num_flag(sub, "--look-ahead", "/detector/look_ahead_s", "Detector look-ahead window (s)");
        num_flag(sub, "--refractory", "/detector/refractory_s", "Skip after a high/low water event (s)");
    };

    auto* simulate = app.add_subcommand("simulate", "Synthesise a tide and the resulting antenna metrics");
    std::string geometry_preset;
    simulate->add_option("--geometry", geometry_preset, "Link preset: 420m or 510m")
        ->check(CLI::IsMember({"420m", "510m"}));
    num_flag(simulate, "--duration", "/simulate/duration_s", "Record length (s)");
    num_flag(simulate, "--dt", "/simulate/dt_s", "Snapshot interval (s)");
    num_flag(simulate, "--start", "/simulate/start_s", "First timestamp (s)");
    num_flag(simulate, "--noise-db", "/simulate/noise_db", "Gaussian metric noise (dB)");
    num_flag(simulate, "--tide-amplitude", "/simulate/tide_amplitude_m", "Tide amplitude (m)");
    num_flag(simulate, "--tide-period", "/simulate/tide_period_s", "Tide period (s)");
    num_flag(simulate, "--tide-phase", "/simulate/tide_phase_rad", "Tide phase (rad)");
    str_flag(simulate, "--path", "/simulate/path", "Path model: exact or linearized");
    str_flag(simulate, "--cell-id", "/simulate/cell_id", "Cell identifier");

    auto* preprocess = app.add_subcommand("preprocess", "Clean and resample a raw metric log");
    std::string raw_path;
    preprocess->add_option("raw_log", raw_path, "Raw log CSV")->required();
    num_flag(preprocess, "--dt", "/ingest/dt_s", "Output grid step (s)");
    num_flag(preprocess, "--max-gap", "/ingest/max_gap_s", "Largest bridged gap (s), default 3*dt");
    num_flag(preprocess, "--iqr-k", "/ingest/iqr_k", "IQR fence multiplier");
    num_flag(preprocess, "--hampel-half", "/ingest/hampel_half", "Hampel half-window (samples)");
    num_flag(preprocess, "--hampel-nmad", "/ingest/hampel_n_mad", "Hampel threshold (scaled MADs)");
    num_flag(preprocess, "--lowpass-period", "/ingest/lowpass_period_s", "Optional low-pass cutoff period (s)");

    auto* analyze = app.add_subcommand("analyze", "Scalogram, S(b) and detections for one series");
    std::string series_path;
    analyze->add_option("series", series_path, "Series CSV from preprocess")->required();
    num_flag(analyze, "--f-min", "/wavelet/f_min_hz", "Lower band edge (Hz)");
    num_flag(analyze, "--f-max", "/wavelet/f_max_hz", "Upper band edge (Hz)");
    num_flag(analyze, "--voices", "/wavelet/voices", "Voices per octave");
    num_flag(analyze, "--antenna", "/wavelet/antenna", "Analyse a single antenna");
    str_flag(analyze, "--metric", "/wavelet/metric", "rsrp, rssi or rsrq");
    bool_flag(analyze, "--coi-only", "/detector/coi_only", "Detect only on COI-valid samples");
    detector_flags(analyze);

    auto* detect = app.add_subcommand("detect", "Run the online detector over an S(b) file");
    std::string feature_path;
    detect->add_option("feature", feature_path, "S(b) CSV (analyze or fuse output)")->required();
    bool_flag(detect, "--coi-only", "/detector/coi_only", "Detect only on COI-valid samples");
    detector_flags(detect);

    auto* fuse = app.add_subcommand("fuse", "Median-fuse per-cell S(b) files");
    std::vector<std::string> fuse_inputs;
    fuse->add_option("features", fuse_inputs, "Per-cell S(b) CSVs")->required();
    num_flag(fuse, "--window", "/fusion/window_s", "Rolling standardisation window (s)");
    num_flag(fuse, "--grid-dt", "/fusion/grid_dt_s", "Fusion grid step (s)");
    num_flag(fuse, "--max-lag", "/fusion/max_lag_s", "Largest lag searched (s); 0 disables");
    bool_flag(fuse, "--trailing", "/fusion/trailing", "Trailing instead of centred window");
    detector_flags(fuse);

    auto* feats = app.add_subcommand("features", "Build the regression feature matrix");
    std::string feat_series;
    std::string fused_path;
    std::string anchor_events;
    feats->add_option("series", feat_series, "Series CSV from preprocess")->required();
    feats->add_option("--fused", fused_path, "Fused S(b) CSV to append");
    feats->add_option("--anchor-events", anchor_events, "Events JSONL; phase origin at the nearest high/low water");
    num_flag(feats, "--tide-period", "/features/tide_period_s", "Tide period for the phase features (s)");
    num_flag(feats, "--phase-origin", "/features/phase_origin_s", "Explicit phase origin (s)");

    auto* train = app.add_subcommand("train", "Train (or fine-tune) the water-level regressor");
    std::string train_features;
    std::string tide_path;
    std::string fine_tune_from;
    train->add_option("features", train_features, "Feature CSV")->required();
    train->add_option("--tide", tide_path, "Reference tide CSV (targets)")->required();
    train->add_option("--fine-tune-from", fine_tune_from, "Start from this model and fine-tune");
    num_flag(train, "--adapt-frac", "/fine_tune/adapt_frac", "Leading fraction used for fine-tuning");
    num_flag(train, "--fine-tune-epochs", "/fine_tune/epochs", "Fine-tuning epochs");
    str_flag(train, "--optimizer", "/trainer/optimizer", "levenberg_marquardt or gradient_descent");
    num_flag(train, "--hidden", "/trainer/hidden", "Hidden units");
    num_flag(train, "--max-epochs", "/trainer/max_epochs", "Epoch limit");
    num_flag(train, "--patience", "/trainer/patience", "Early-stopping patience");
    num_flag(train, "--weight-decay", "/trainer/weight_decay", "L2 penalty");
    num_flag(train, "--learning-rate", "/trainer/learning_rate", "Gradient-descent step");
    num_flag(train, "--train-frac", "/split/train", "Training fraction");
    num_flag(train, "--val-frac", "/split/val", "Validation fraction");
    num_flag(train, "--test-frac", "/split/test", "Test fraction");

    auto* predict = app.add_subcommand("predict", "Predict water level with a saved model");
    std::string predict_features;
    std::string model_path;
    std::string predict_tide;
    predict->add_option("features", predict_features, "Feature CSV")->required();
    predict->add_option("--model", model_path, "Model JSON")->required();
    predict->add_option("--tide", predict_tide, "Reference tide CSV (adds y_true_m)");

    auto* evaluate = app.add_subcommand("evaluate", "RMSE/MAE of a predictions file");
    std::string pred_path;
    double start_frac = 0.0;
    evaluate->add_option("predictions", pred_path, "Predictions CSV")->required();
    evaluate->add_option("--start-frac", start_frac, "Skip this leading fraction of rows");

    auto* plot = app.add_subcommand("plot", "Render a CSV output as SVG");
    std::string plot_path;
    std::string plot_events;
    std::string plot_title;
    plot->add_option("file", plot_path, "CSV to plot")->required();
    plot->add_option("--events", plot_events, "Events JSONL to mark");
    plot->add_option("--title", plot_title, "Chart title");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        json cfg = default_config();
        if (!config_path.empty()) {
            auto in = csv::open_for_read(config_path);
            json file;
            try {
                in >> file;
            } catch (const json::exception& e) {
                throw ValidationError("config '" + config_path + "' is not valid JSON: " + e.what());
            }
            if (file.contains("command") && file.contains("config")) {
                file = file.at("config");
            }
            merge_checked(cfg, file, "");
        }
        if (sub == simulate && !geometry_preset.empty()) {
            const auto g = geometry_preset == "420m" ? sim::LinkGeometry::river_link_420m()
                                                     : sim::LinkGeometry::river_link_510m();
            cfg["geometry"] = {{"tx_height_m", g.tx_height},
                               {"rx_heights_m", g.rx_heights},
                               {"range_m", g.range},
                               {"carrier_mhz", g.carrier_freq / 1e6}};
        }
        for (const auto& [ptr, get] : overrides) {
            if (auto v = get()) {
                cfg[ptr] = *v;
            }
        }
        if (seed_opt->count() > 0) {
            cfg["seed"] = seed;
        }
        const std::string name = sub->get_name();
        Run run(name, cfg, out_dir);
        if (sub == simulate) {
            cmd_simulate(run);
        } else if (sub == preprocess) {
            run.arg("raw_log", raw_path);
            cmd_preprocess(run, raw_path);
        } else if (sub == analyze) {
            run.arg("series", series_path);
            cmd_analyze(run, series_path);
        } else if (sub == detect) {
            run.arg("feature", feature_path);
            cmd_detect(run, feature_path);
        } else if (sub == fuse) {
            run.arg("features", fuse_inputs);
            cmd_fuse(run, fuse_inputs);
        } else if (sub == feats) {
            run.arg("series", feat_series);
            run.arg("fused", fused_path);
            run.arg("anchor_events", anchor_events);
            cmd_features(run, feat_series, fused_path, anchor_events);
        } else if (sub == train) {
            run.arg("features", train_features);
            run.arg("tide", tide_path);
            run.arg("fine_tune_from", fine_tune_from);
            cmd_train(run, train_features, tide_path, fine_tune_from);
        } else if (sub == predict) {
            run.arg("features", predict_features);
            run.arg("model", model_path);
            run.arg("tide", predict_tide);
            cmd_predict(run, predict_features, model_path, predict_tide);
        } else if (sub == evaluate) {
            run.arg("predictions", pred_path);
            run.arg("start_frac", start_frac);
            cmd_evaluate(run, pred_path, start_frac);
        } else if (sub == plot) {
            run.arg("file", plot_path);
            run.arg("events", plot_events);
            run.arg("title", plot_title);
            cmd_plot(run, plot_path, plot_events, plot_title);
        }
        run.finish();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return 0;
}
