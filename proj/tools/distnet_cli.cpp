// Command-line entry point: synthetic data generation, standalone grid
// interpolation, training, prediction, evaluation and encoder-length sweeps.
//
// Exit codes: 0 success, 2 configuration error, 3 data or file error,
// 4 numeric failure, 1 internal error.

#include "distnet/errors.hpp"
#include "distnet/interpolation.hpp"
#include "distnet/run.hpp"
#include "distnet/synth.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace distnet;

namespace {

enum Exit { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kNumeric = 4 };

/// Flags shared by train and sweep; each set flag overrides the config file.
struct RunFlags {
    std::string config;
    std::optional<std::string> manifest, model, pollutant, out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> encoder_length, horizon, batch_size, max_epochs, patience, max_steps,
        max_train_windows, stride;
    std::optional<double> learning_rate;
    std::vector<std::string> set;

    void add_to(CLI::App& app) {
        app.add_option("-c,--config", config, "JSON run configuration with flat keys")->check(CLI::ExistingFile);
        app.add_option("--manifest", manifest, "Dataset manifest.json");
        app.add_option("--model", model, "distnet | mlp | local_seq2seq | neighbor_seq2seq | persistence");
        app.add_option("--pollutant", pollutant, "pm25 | pm10 | o3");
        app.add_option("-o,--out", out, "Output directory");
        app.add_option("--seed", seed, "Seed for initialization and shuffling");
        app.add_option("--encoder-length", encoder_length, "Encoder length T in hours");
        app.add_option("--horizon", horizon, "Forecast horizon in hours");
        app.add_option("--batch-size", batch_size);
        app.add_option("--epochs", max_epochs, "Maximum epochs");
        app.add_option("--patience", patience, "Early-stopping patience in epochs");
        app.add_option("--max-steps", max_steps, "Stop after this many optimizer steps (0 = no limit)");
        app.add_option("--lr", learning_rate, "Adam learning rate");
        app.add_option("--max-train-windows", max_train_windows, "Evenly spaced subsample of training windows");
        app.add_option("--stride", stride, "Hours between training windows");
        app.add_option("--set", set, "Override any config key: key=value (value parsed as JSON when possible)");
    }

    /// Defaults, then the config file, then flags.
    run::RunConfig resolve() const {
        nlohmann::json j = nlohmann::json::object();
        std::filesystem::path base;
        if (!config.empty()) {
            // Parse through RunConfig::load for its error reporting, then keep
            // only the keys the file set so flags can overlay them.
            run::RunConfig::load(config);
            std::ifstream in(config);
            in >> j;
            base = std::filesystem::path(config).parent_path();
            if (j.contains("manifest")) {
                std::filesystem::path m = j["manifest"].get<std::string>();
                if (m.is_relative()) j["manifest"] = (base / m).string();
            }
        }
        auto put = [&j](const char* key, const auto& value) {
            if (value) j[key] = *value;
        };
        put("manifest", manifest);
        put("model", model);
        put("pollutant", pollutant);
        put("output_dir", out);
        put("seed", seed);
        put("encoder_length", encoder_length);
        put("horizon", horizon);
        put("batch_size", batch_size);
        put("max_epochs", max_epochs);
        put("patience", patience);
        put("max_steps", max_steps);
        put("max_train_windows", max_train_windows);
        put("stride", stride);
        put("learning_rate", learning_rate);
        for (const auto& kv : set) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos || eq == 0) {
                throw ConfigError("--set expects key=value, got '" + kv + "'");
            }
            const std::string key = kv.substr(0, eq), text = kv.substr(eq + 1);
            j[key] = nlohmann::json::accept(text) ? nlohmann::json::parse(text) : nlohmann::json(text);
        }
        return run::RunConfig::from_json(j);
    }
};

int cmd_synth(const std::string& preset, std::uint64_t seed, std::optional<std::size_t> hours,
              const std::string& out) {
    auto cfg = synth::preset(preset, seed);
    if (hours) {
        cfg.hours = *hours;
    }
    const auto dir = run::resolve_output(out);
    const auto result = synth::generate(cfg);
    const auto manifest = synth::write_dataset(result, dir);
    run::write_json(dir / "synth_config.json", {{"preset", preset}, {"seed", seed}, {"hours", cfg.hours}});
    std::cout << "wrote " << result.dataset.stations.size() << " stations x " << result.dataset.hours
              << " hours to " << manifest.string() << '\n';
    return kOk;
}

int cmd_interpolate(const std::string& manifest_path, const std::string& pollutant_name, const std::string& from,
                    std::optional<std::string> to, const std::string& out) {
    const auto manifest = data::load_manifest(manifest_path);
    const auto dataset = data::load_dataset(manifest);
    const auto pollutant = data::parse_pollutant(pollutant_name);
    const data::Hour first = data::parse_timestamp(from);
    const data::Hour last = to ? data::parse_timestamp(*to) : first;
    const data::Hour end = dataset.start + static_cast<data::Hour>(dataset.hours) - 1;
    if (last < first) {
        throw ConfigError("--to precedes --from");
    }
    if (first < dataset.start || last > end) {
        throw BoundsError("requested hours " + data::format_timestamp(first) + " to " + data::format_timestamp(last) +
                          " fall outside the data range " + data::format_timestamp(dataset.start) + " to " +
                          data::format_timestamp(end));
    }
    const std::size_t n = dataset.stations.size();
    const std::size_t offset = static_cast<std::size_t>(first - dataset.start);
    const std::size_t hours = static_cast<std::size_t>(last - first) + 1;
    const auto& all = dataset.pollution[static_cast<std::size_t>(pollutant)];
    const std::span<const double> readings(all.data() + offset * n, hours * n);
    const auto filled = grid::fill_series(dataset.stations, readings, hours);
    for (const auto& w : filled.warnings) {
        std::cerr << "warning: " << w << '\n';
    }
    const auto path = run::resolve_output(out);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    data::write_grid_csv(path, first, hours, manifest.grid, filled.series.values);
    auto sidecar = path;
    sidecar += ".json";
    run::write_json(sidecar, {{"manifest", std::filesystem::absolute(manifest_path).string()},
                              {"pollutant", pollutant_name},
                              {"from", data::format_timestamp(first)},
                              {"to", data::format_timestamp(last)},
                              {"warnings", filled.warnings}});
    std::cout << "wrote " << hours * manifest.grid.cell_count() << " cells to " << path.string() << '\n';
    return kOk;
}

int cmd_train(const RunFlags& flags) {
    const auto config = flags.resolve();
    const auto outcome = run::train_run(config);
    for (const auto& e : outcome.report.epochs) {
        std::cout << "epoch " << e.epoch << "  steps " << e.steps << "  train_loss " << e.train_loss
                  << "  val_smape " << e.val_smape << "  val_rmse " << e.val_rmse << '\n';
    }
    std::cout << outcome.report.stop_reason << "; best epoch " << outcome.report.best_epoch << " (val SMAPE "
              << outcome.report.best_val_smape << ")\ncheckpoint " << outcome.checkpoint_path.string() << '\n';
    return kOk;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& manifest, const std::string& out,
                 const std::string& split, std::optional<std::size_t> stride) {
    const auto checkpoint = models::load_checkpoint(checkpoint_path);
    const auto outcome = run::evaluate_run(checkpoint, manifest, out, run::parse_split(split), stride);
    const auto& r = outcome.result;
    std::cout << r.pollutant << " " << split << ": " << outcome.windows << " windows, SMAPE " << r.smape << ", RMSE "
              << r.rmse << ", band coverage " << eval::band_coverage(outcome.bands) << '\n';
    for (const auto& s : r.segments) {
        std::cout << "  hours " << s.start_h << "-" << s.end_h << "  SMAPE " << s.smape << "  RMSE " << s.rmse << '\n';
    }
    std::cout << "report written to " << run::resolve_output(out).string() << '\n';
    return kOk;
}

int cmd_predict(const std::string& checkpoint_path, const std::string& manifest, const std::string& issue,
                const std::vector<std::string>& stations, const std::string& out) {
    const auto checkpoint = models::load_checkpoint(checkpoint_path);
    const auto forecasts = run::predict_run(checkpoint, manifest, data::parse_timestamp(issue), stations);
    // Station ids in dataset order, for the CSV writer.
    const auto m = data::load_manifest(manifest.empty() ? checkpoint.run_config.at("run").at("manifest").get<std::string>()
                                                        : manifest);
    std::vector<std::string> ids;
    for (const auto& s : data::read_station_csv(m.stations_csv)) ids.push_back(s.id);
    const auto path = run::resolve_output(out);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    run::write_predictions_csv(path, forecasts, ids, data::pollutant_name(checkpoint.pollutant));
    auto sidecar = path;
    sidecar += ".json";
    run::write_json(sidecar, {{"checkpoint", std::filesystem::absolute(checkpoint_path).string()},
                              {"issue_time", issue},
                              {"stations", stations},
                              {"run", checkpoint.run_config.at("run")}});
    std::cout << "wrote " << forecasts.size() << " forecasts to " << path.string() << '\n';
    return kOk;
}

int cmd_sweep(const RunFlags& flags, const std::string& lengths_text, const std::string& out) {
    const auto config = flags.resolve();
    std::vector<std::size_t> lengths;
    std::stringstream ss(lengths_text);
    for (std::string item; std::getline(ss, item, ',');) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(item, &used);
            if (used != item.size() || v <= 0) throw std::invalid_argument(item);
            lengths.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError("--lengths expects positive integers separated by commas, got '" + item + "'");
        }
    }
    const auto prepared = run::prepare(config);
    features::WindowOptions wo;
    wo.horizon = config.model_config.horizon;
    wo.train_cutoff = prepared.manifest.train_cutoff;
    wo.validation_fraction = config.validation_fraction;
    wo.stride = config.stride;
    const auto rows = eval::encoder_length_sweep(prepared.series, lengths, config.model, config.model_config,
                                                 config.train, wo, config.seed, config.max_train_windows);
    const auto path = run::resolve_output(out);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    eval::write_sweep_csv(rows, path);
    auto sidecar = path;
    sidecar += ".json";
    run::write_json(sidecar, {{"config", config.to_json()}, {"lengths", lengths}});
    for (const auto& r : rows) {
        std::cout << "T=" << r.encoder_length << "  SMAPE " << r.smape << "  RMSE " << r.rmse << '\n';
    }
    return kOk;
}

int report(const char* kind, const std::exception& e, int code) {
    std::cerr << "distnet: " << kind << ": " << e.what() << '\n';
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spatio-temporal air quality forecasting on gridded station data"};
    app.require_subcommand(1);

    std::string preset = "tiny", synth_out = "data";
    std::uint64_t synth_seed = 1;
    std::optional<std::size_t> synth_hours;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset and manifest");
    synth_cmd->add_option("--preset", preset, "tiny | beijing-like | constant | linear");
    synth_cmd->add_option("--seed", synth_seed);
    synth_cmd->add_option("--hours", synth_hours, "Override the preset length");
    synth_cmd->add_option("-o,--out", synth_out, "Output directory");

    std::string interp_manifest, interp_pollutant = "pm25", interp_from, interp_out = "grid.csv";
    std::optional<std::string> interp_to;
    auto* interp_cmd = app.add_subcommand("interpolate", "Fill every grid cell from station readings");
    interp_cmd->add_option("--manifest", interp_manifest)->required();
    interp_cmd->add_option("--pollutant", interp_pollutant);
    interp_cmd->add_option("--hour,--from", interp_from, "First hour, YYYY-MM-DDTHH:MM:SS")->required();
    interp_cmd->add_option("--to", interp_to, "Last hour (defaults to --from)");
    interp_cmd->add_option("-o,--out", interp_out, "Output CSV");

    RunFlags train_flags;
    auto* train_cmd = app.add_subcommand("train", "Train a model and save its best checkpoint");
    train_flags.add_to(*train_cmd);

    std::string eval_checkpoint, eval_manifest, eval_out = "eval", eval_split = "test";
    std::optional<std::size_t> eval_stride;
    auto* eval_cmd = app.add_subcommand("evaluate", "Sliding-window evaluation with metric, segment and band reports");
    eval_cmd->add_option("--checkpoint", eval_checkpoint)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--manifest", eval_manifest, "Dataset (defaults to the one used for training)");
    eval_cmd->add_option("-o,--out", eval_out, "Report directory");
    eval_cmd->add_option("--split", eval_split, "train | validation | test");
    eval_cmd->add_option("--stride", eval_stride, "Hours between windows (default 1)");

    std::string pred_checkpoint, pred_manifest, pred_issue, pred_out = "predictions.csv";
    std::vector<std::string> pred_stations;
    auto* pred_cmd = app.add_subcommand("predict", "Forecast the hours after an issue time");
    pred_cmd->add_option("--checkpoint", pred_checkpoint)->required()->check(CLI::ExistingFile);
    pred_cmd->add_option("--manifest", pred_manifest, "Dataset (defaults to the one used for training)");
    pred_cmd->add_option("--issue-time", pred_issue, "Last observed hour, YYYY-MM-DDTHH:MM:SS")->required();
    pred_cmd->add_option("--station", pred_stations, "Station id (repeatable; default all)");
    pred_cmd->add_option("-o,--out", pred_out, "Output CSV");

    RunFlags sweep_flags;
    std::string sweep_lengths, sweep_out = "sweep.csv";
    auto* sweep_cmd = app.add_subcommand("sweep", "Test error as a function of encoder length");
    sweep_flags.add_to(*sweep_cmd);
    sweep_cmd->add_option("--lengths", sweep_lengths, "Comma-separated encoder lengths")->required();
    sweep_cmd->add_option("--csv", sweep_out, "Output CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    try {
        if (*synth_cmd) return cmd_synth(preset, synth_seed, synth_hours, synth_out);
        if (*interp_cmd) return cmd_interpolate(interp_manifest, interp_pollutant, interp_from, interp_to, interp_out);
        if (*train_cmd) return cmd_train(train_flags);
        if (*eval_cmd) return cmd_evaluate(eval_checkpoint, eval_manifest, eval_out, eval_split, eval_stride);
        if (*pred_cmd) return cmd_predict(pred_checkpoint, pred_manifest, pred_issue, pred_stations, pred_out);
        if (*sweep_cmd) return cmd_sweep(sweep_flags, sweep_lengths, sweep_out);
    } catch (const ConfigError& e) {
        return report("config error", e, kConfig);
    } catch (const LookupError& e) {
        return report("config error", e, kConfig);
    } catch (const VersionError& e) {
        return report("checkpoint error", e, kConfig);
    } catch (const DataError& e) {
        return report("data error", e, kData);
    } catch (const BoundsError& e) {
        return report("data error", e, kData);
    } catch (const IoError& e) {
        return report("file error", e, kData);
    } catch (const NumericError& e) {
        return report("numeric failure", e, kNumeric);
    } catch (const std::filesystem::filesystem_error& e) {
        return report("file error", e, kData);
    } catch (const std::exception& e) {
        return report("internal error", e, kInternal);
    }
    return kInternal;
}
