#include "distnet/run.hpp"

#include "distnet/errors.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>

namespace distnet::run {

namespace {

const std::set<std::string>& model_keys() {
    static const std::set<std::string> keys = [] {
        std::set<std::string> k;
        const auto defaults = models::ModelConfig{}.to_json();
        for (const auto& [key, _] : defaults.items()) k.insert(key);
        return k;
    }();
    return keys;
}

// The run seed drives training too, so the train-level seed is not a key.
const std::set<std::string>& train_keys() {
    static const std::set<std::string> keys = [] {
        std::set<std::string> k;
        const auto defaults = training::TrainConfig{}.to_json();
        for (const auto& [key, _] : defaults.items()) k.insert(key);
        k.erase("seed");
        return k;
    }();
    return keys;
}

const std::set<std::string> kRunKeys{"manifest",         "model",       "pollutant",         "output_dir",
                                     "seed",             "validation_fraction", "stride",     "eval_stride",
                                     "max_train_windows", "max_val_windows", "neighbor_radius_km", "max_gap_fill"};

void ensure_directory(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw IoError("cannot create directory '" + dir.string() + "'" + (ec ? ": " + ec.message() : ""));
    }
}

double mean_target(const std::vector<features::SampleWindow>& windows) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& w : windows) {
        for (double v : w.target) {
            sum += v;
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

features::PrepareOptions prepare_options(const RunConfig& config, const data::Manifest& manifest) {
    features::PrepareOptions o;
    o.train_cutoff = manifest.train_cutoff;
    o.max_gap_fill = config.max_gap_fill;
    o.neighbor_radius_km = config.neighbor_radius_km;
    o.sectors = config.model_config.sectors;
    o.strict_normalization = false;
    return o;
}

features::WindowOptions window_options(const RunConfig& config, const data::Manifest& manifest, std::size_t stride) {
    features::WindowOptions w;
    w.encoder_length = config.model_config.encoder_length;
    w.horizon = config.model_config.horizon;
    w.train_cutoff = manifest.train_cutoff;
    w.validation_fraction = config.validation_fraction;
    w.stride = stride;
    return w;
}

std::vector<std::string> station_ids(const features::PreparedSeries& series) {
    std::vector<std::string> ids;
    for (const auto& s : series.stations().stations()) ids.push_back(s.id);
    return ids;
}

/// Run configuration and dataset grid stored with a checkpoint.
nlohmann::json checkpoint_context(const RunConfig& config, const grid::GridSpec& grid) {
    return {{"run", config.to_json()}, {"grid", data::grid_to_json(grid)}};
}

RunConfig config_from_checkpoint(const models::Checkpoint& checkpoint) {
    try {
        auto config = RunConfig::from_json(checkpoint.run_config.at("run"));
        // The stored model is authoritative for the shape.
        config.model = checkpoint.model.kind();
        config.model_config = checkpoint.model.config();
        config.pollutant = checkpoint.pollutant;
        return config;
    } catch (const nlohmann::json::exception& e) {
        throw VersionError(std::string("checkpoint has no usable run configuration: ") + e.what());
    } catch (const ConfigError& e) {
        throw VersionError(std::string("checkpoint run configuration is invalid: ") + e.what());
    }
}

struct CheckpointData {
    data::Manifest manifest;
    data::Dataset dataset;
    std::shared_ptr<const features::PreparedSeries> series;
};

/// Prepares the dataset with the checkpoint's frozen normalization and checks
/// that the model fits it.
CheckpointData prepare_for_checkpoint(const models::Checkpoint& checkpoint, RunConfig& config,
                                      const std::filesystem::path& manifest) {
    CheckpointData out;
    auto& loaded = out.manifest;
    if (!manifest.empty()) {
        config.manifest = manifest;
    }
    loaded = data::load_manifest(config.manifest);
    if (checkpoint.run_config.contains("grid")) {
        const auto expected = checkpoint.run_config.at("grid");
        if (data::grid_to_json(loaded.grid) != expected) {
            throw VersionError("checkpoint was trained on grid " + expected.dump() + ", dataset has " +
                               data::grid_to_json(loaded.grid).dump());
        }
    }
    out.dataset = data::load_dataset(loaded);
    try {
        out.series = features::PreparedSeries::prepare(out.dataset, config.pollutant, prepare_options(config, loaded),
                                                       &checkpoint.normalization);
        if (out.series->stats_config().gamma() != checkpoint.model.config().gamma ||
            out.series->channels() != checkpoint.model.config().channels) {
            throw VersionError("checkpoint model inputs do not match the dataset features");
        }
        return out;
    } catch (const LookupError& e) {
        throw VersionError(std::string("checkpoint normalization does not cover the dataset: ") + e.what());
    }
}

} // namespace

// ---- configuration ---------------------------------------------------------

void RunConfig::validate() const {
    model_config.validate();
    train.validate();
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw ConfigError("run config: validation_fraction must lie in [0, 1)");
    }
    if (stride == 0 || eval_stride == 0) {
        throw ConfigError("run config: strides must be at least 1");
    }
    if (!(neighbor_radius_km > 0.0)) {
        throw ConfigError("run config: neighbor_radius_km must be positive");
    }
    if (output_dir.empty()) {
        throw ConfigError("run config: output_dir is empty");
    }
    features::StatsConfig stats;
    if (stats.gamma() != model_config.gamma) {
        throw ConfigError("run config: gamma must be " + std::to_string(stats.gamma()) +
                          " to match the statistical features");
    }
    if (model_config.channels != features::kChannels) {
        throw ConfigError("run config: channels must be " + std::to_string(features::kChannels));
    }
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j = model_config.to_json();
    const auto train_json = train.to_json();
    for (const auto& [key, value] : train_json.items()) {
        if (key != "seed") j[key] = value;
    }
    j["manifest"] = manifest.string();
    j["model"] = models::kind_name(model);
    j["pollutant"] = data::pollutant_name(pollutant);
    j["output_dir"] = output_dir.string();
    j["seed"] = seed;
    j["validation_fraction"] = validation_fraction;
    j["stride"] = stride;
    j["eval_stride"] = eval_stride;
    j["max_train_windows"] = max_train_windows;
    j["max_val_windows"] = max_val_windows;
    j["neighbor_radius_km"] = neighbor_radius_km;
    j["max_gap_fill"] = max_gap_fill;
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) {
        throw ConfigError("run config: expected a JSON object");
    }
    nlohmann::json model_json = nlohmann::json::object(), train_json = nlohmann::json::object();
    for (const auto& [key, value] : j.items()) {
        if (model_keys().count(key)) {
            model_json[key] = value;
        } else if (train_keys().count(key)) {
            train_json[key] = value;
        } else if (!kRunKeys.count(key)) {
            throw ConfigError("run config: unknown key '" + key + "'");
        }
    }
    RunConfig c;
    c.model_config = models::ModelConfig::from_json(model_json);
    c.train = training::TrainConfig::from_json(train_json);
    try {
        if (j.contains("manifest")) {
            c.manifest = j.at("manifest").get<std::string>();
            if (c.manifest.is_relative() && !base_dir.empty()) c.manifest = base_dir / c.manifest;
        }
        if (j.contains("model")) c.model = models::parse_kind(j.at("model").get<std::string>());
        if (j.contains("pollutant")) c.pollutant = data::parse_pollutant(j.at("pollutant").get<std::string>());
        c.output_dir = j.value("output_dir", c.output_dir.string());
        c.seed = j.value("seed", c.seed);
        c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
        c.stride = j.value("stride", c.stride);
        c.eval_stride = j.value("eval_stride", c.eval_stride);
        c.max_train_windows = j.value("max_train_windows", c.max_train_windows);
        c.max_val_windows = j.value("max_val_windows", c.max_val_windows);
        c.neighbor_radius_km = j.value("neighbor_radius_km", c.neighbor_radius_km);
        c.max_gap_fill = j.value("max_gap_fill", c.max_gap_fill);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    } catch (const LookupError& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    c.train.seed = c.seed;
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read config '" + path.string() + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path.string() + "': " + e.what());
    }
    return from_json(j, path.parent_path());
}

std::filesystem::path resolve_output(const std::filesystem::path& path) {
    if (path.is_absolute()) {
        return path;
    }
    const char* root = std::getenv(kOutputRootVariable);
    if (root == nullptr || *root == '\0') {
        return path;
    }
    return std::filesystem::path(root) / path;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& json) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write '" + path.string() + "'");
    }
    out << json.dump(2) << '\n';
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

// ---- preparation -----------------------------------------------------------

PreparedRun prepare(const RunConfig& config, const features::NormalizationSpec* frozen) {
    config.validate();
    if (config.manifest.empty()) {
        throw ConfigError("run config: manifest is required");
    }
    PreparedRun run;
    run.manifest = data::load_manifest(config.manifest);
    bool listed = false;
    for (auto p : run.manifest.pollutants) listed = listed || p == config.pollutant;
    if (!listed) {
        throw ConfigError("pollutant '" + data::pollutant_name(config.pollutant) + "' is not in the dataset");
    }
    run.dataset = data::load_dataset(run.manifest);
    run.series = features::PreparedSeries::prepare(run.dataset, config.pollutant,
                                                   prepare_options(config, run.manifest), frozen);
    run.windows = features::build_windows(run.series, window_options(config, run.manifest, config.stride));
    return run;
}

std::vector<features::SampleWindow> subsample(const std::vector<features::SampleWindow>& windows, std::size_t limit) {
    if (limit == 0 || windows.size() <= limit) {
        return windows;
    }
    std::vector<features::SampleWindow> out;
    out.reserve(limit);
    for (std::size_t i = 0; i < limit; ++i) {
        out.push_back(windows[i * windows.size() / limit]);
    }
    return out;
}

// ---- training --------------------------------------------------------------

TrainOutcome train_run(const RunConfig& config) {
    const auto run = prepare(config);
    const auto train_windows = subsample(run.windows.train, config.max_train_windows);
    const auto val_windows = subsample(run.windows.validation, config.max_val_windows);
    if (train_windows.empty() || val_windows.empty()) {
        throw DataError("dataset yields " + std::to_string(train_windows.size()) + " training and " +
                        std::to_string(val_windows.size()) + " validation windows; both must be nonempty");
    }
    auto model = models::Model::create(config.model, config.model_config, run.series->target_range(), config.seed);
    if (model.trainable()) {
        model.initialize_output(mean_target(train_windows));
    }
    auto train_config = config.train;
    train_config.seed = config.seed;

    const auto dir = resolve_output(config.output_dir);
    ensure_directory(dir);
    auto report = training::train(model, train_windows, val_windows, train_config);

    // Later commands may run from another directory.
    auto stored = config;
    stored.manifest = std::filesystem::absolute(config.manifest);
    TrainOutcome outcome{models::Checkpoint{std::move(model), run.series->normalization(), config.pollutant,
                                            checkpoint_context(stored, run.manifest.grid)},
                         std::move(report), dir / "checkpoint.json"};
    outcome.report.best_checkpoint = outcome.checkpoint_path;
    models::save_checkpoint(outcome.checkpoint, outcome.checkpoint_path);
    outcome.report.write_csv(dir / "train_report.csv");
    write_json(dir / "train_report.json", {{"config", config.to_json()},
                                           {"seed", config.seed},
                                           {"windows", {{"train", train_windows.size()},
                                                        {"validation", val_windows.size()},
                                                        {"dropped_gaps", run.windows.dropped_gaps},
                                                        {"dropped_straddle", run.windows.dropped_straddle}}},
                                           {"warnings", run.series->warnings()},
                                           {"report", outcome.report.to_json()}});
    return outcome;
}

// ---- evaluation ------------------------------------------------------------

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "validation") return Split::validation;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split '" + std::string(name) + "' (expected train, validation or test)");
}

std::string split_name(Split split) {
    switch (split) {
    case Split::train:
        return "train";
    case Split::validation:
        return "validation";
    case Split::test:
        return "test";
    }
    return "test";
}

EvalOutcome evaluate_run(const models::Checkpoint& checkpoint, const std::filesystem::path& manifest,
                         const std::filesystem::path& out_dir, Split split, std::optional<std::size_t> stride) {
    auto config = config_from_checkpoint(checkpoint);
    if (stride) {
        config.eval_stride = *stride;
    }
    config.validate();
    const auto prepared = prepare_for_checkpoint(checkpoint, config, manifest);
    const auto& series = prepared.series;
    const auto windows =
        features::build_windows(series, window_options(config, prepared.manifest, config.eval_stride));
    const auto& selected = split == Split::train        ? windows.train
                           : split == Split::validation ? windows.validation
                                                        : windows.test;
    if (selected.empty()) {
        throw DataError("no complete " + split_name(split) + " windows to evaluate");
    }
    std::vector<eval::Forecast> forecasts;
    try {
        forecasts = eval::forecast_windows(checkpoint.model, selected);
    } catch (const ConfigError& e) {
        throw VersionError(std::string("checkpoint does not fit the dataset: ") + e.what());
    }
    const auto ids = station_ids(*series);
    EvalOutcome outcome;
    outcome.windows = selected.size();
    outcome.result = eval::evaluate_forecasts(data::pollutant_name(config.pollutant), ids, forecasts,
                                              config.train.epsilon);
    outcome.bands = eval::band_aggregate(forecasts);

    auto report_config = config.to_json();
    report_config["split"] = split_name(split);
    report_config["windows"] = selected.size();
    const auto dir = resolve_output(out_dir);
    ensure_directory(dir);
    eval::emit_report(outcome.result, outcome.bands, ids, dir, report_config);
    return outcome;
}

// ---- prediction ------------------------------------------------------------

std::vector<eval::Forecast> predict_run(const models::Checkpoint& checkpoint, const std::filesystem::path& manifest,
                                        data::Hour issue_time, const std::vector<std::string>& station_ids) {
    auto config = config_from_checkpoint(checkpoint);
    const auto prepared = prepare_for_checkpoint(checkpoint, config, manifest);
    const auto& series = prepared.series;
    const std::size_t T = config.model_config.encoder_length, tau = config.model_config.horizon;
    const data::Hour first = series->start() + static_cast<data::Hour>(T) - 1;
    const data::Hour last = series->start() + static_cast<data::Hour>(series->hours()) - 1;
    if (issue_time < first || issue_time > last) {
        throw BoundsError("issue time " + data::format_timestamp(issue_time) + " needs " + std::to_string(T) +
                          " hours of history inside the data range " + data::format_timestamp(series->start()) +
                          " to " + data::format_timestamp(last));
    }
    std::vector<std::size_t> stations;
    if (station_ids.empty()) {
        for (std::size_t s = 0; s < series->stations().size(); ++s) stations.push_back(s);
    } else {
        for (const auto& id : station_ids) stations.push_back(series->stations().index_of(id));
    }
    const auto issue_index = static_cast<std::size_t>(issue_time - series->start());
    std::vector<eval::Forecast> out;
    for (std::size_t s : stations) {
        features::SampleWindow w;
        w.series = series;
        w.station = s;
        w.start = issue_index + 1 - T;
        w.encoder_length = T;
        w.horizon = tau;
        w.time_ids = features::time_features(issue_time + 1, tau);
        w.target.assign(tau, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t t = 0; t < tau; ++t) {
            const std::size_t h = issue_index + 1 + t;
            if (h < series->hours()) {
                w.target[t] = prepared.dataset.reading(config.pollutant, h, s);
            }
        }
        std::vector<double> prediction;
        try {
            prediction = checkpoint.model.predict(w);
        } catch (const ConfigError& e) {
            throw VersionError(std::string("checkpoint does not fit the dataset: ") + e.what());
        }
        out.push_back({s, issue_time + 1, std::move(prediction), std::move(w.target)});
    }
    return out;
}

void write_predictions_csv(const std::filesystem::path& path, const std::vector<eval::Forecast>& forecasts,
                           const std::vector<std::string>& station_ids, const std::string& pollutant) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write '" + path.string() + "'");
    }
    out << "timestamp,station_id,pollutant,lead,prediction,truth\n";
    for (const auto& f : forecasts) {
        for (std::size_t t = 0; t < f.prediction.size(); ++t) {
            out << data::format_timestamp(f.first_target + static_cast<data::Hour>(t)) << ','
                << station_ids.at(f.station) << ',' << pollutant << ',' << t + 1 << ','
                << data::format_number(f.prediction[t]) << ',';
            if (t < f.truth.size() && std::isfinite(f.truth[t])) {
                out << data::format_number(f.truth[t]);
            }
            out << '\n';
        }
    }
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

} // namespace distnet::run
