#pragma once

// End-to-end runs shared by the command-line tool and the acceptance suite:
// a flat JSON run configuration, dataset preparation, training with
// checkpointing, and evaluation into report files.

#include "distnet/eval.hpp"
#include "distnet/features.hpp"
#include "distnet/models.hpp"
#include "distnet/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace distnet::run {

/// Environment variable naming the directory relative output paths resolve
/// against.
inline constexpr const char* kOutputRootVariable = "DISTNET_OUTPUT_ROOT";

struct RunConfig {
    std::filesystem::path manifest;
    models::ModelKind model = models::ModelKind::distnet;
    data::Pollutant pollutant = data::Pollutant::pm25;
    std::filesystem::path output_dir = "run";
    std::uint64_t seed = 1; // model initialization and batch shuffling
    models::ModelConfig model_config;
    training::TrainConfig train;
    double validation_fraction = 0.1;
    std::size_t stride = 1;            // hours between training/validation windows
    std::size_t eval_stride = 1;       // hours between test windows
    std::size_t max_train_windows = 0; // evenly spaced subsample; 0 = all
    std::size_t max_val_windows = 0;
    double neighbor_radius_km = 10.0;
    std::size_t max_gap_fill = 6;

    /// Throws ConfigError on invalid values.
    void validate() const;
    /// Flat key/value form; every key accepted by from_json appears.
    nlohmann::json to_json() const;
    /// Missing keys keep defaults; unknown keys are a ConfigError. A relative
    /// manifest path is resolved against `base_dir`.
    static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    /// Throws IoError when unreadable and ConfigError on malformed JSON.
    static RunConfig load(const std::filesystem::path& path);
};

/// Relative paths go under $DISTNET_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output(const std::filesystem::path& path);

struct PreparedRun {
    data::Manifest manifest;
    data::Dataset dataset;
    std::shared_ptr<const features::PreparedSeries> series;
    features::WindowSet windows;
};

/// Loads the dataset and builds windows. With `frozen`, normalization comes
/// from a checkpoint instead of being refitted.
PreparedRun prepare(const RunConfig& config, const features::NormalizationSpec* frozen = nullptr);

/// Evenly spaced subsample of at most `limit` windows (all when limit = 0).
std::vector<features::SampleWindow> subsample(const std::vector<features::SampleWindow>& windows, std::size_t limit);

struct TrainOutcome {
    models::Checkpoint checkpoint;
    training::TrainReport report;
    std::filesystem::path checkpoint_path;
};

/// Trains per the configuration and writes checkpoint.json,
/// train_report.csv and train_report.json into the output directory.
TrainOutcome train_run(const RunConfig& config);

enum class Split { train, validation, test };
Split parse_split(std::string_view name);
std::string split_name(Split split);

struct EvalOutcome {
    eval::EvalResult result;
    std::vector<eval::BandPoint> bands;
    std::size_t windows = 0;
};

/// Sliding-window forecasts of a checkpoint over one split of a dataset,
/// written as a report into `out_dir`. `manifest` overrides the dataset in
/// the checkpoint's run configuration when nonempty. Throws VersionError when
/// the checkpoint does not fit the dataset.
EvalOutcome evaluate_run(const models::Checkpoint& checkpoint, const std::filesystem::path& manifest,
                         const std::filesystem::path& out_dir, Split split = Split::test,
                         std::optional<std::size_t> stride = std::nullopt);

/// Forecasts for the τ hours after `issue_time` from every selected station
/// (all stations when `station_ids` is empty). Truth is NaN where no reading
/// exists. Throws BoundsError when fewer than T hours of data end at
/// `issue_time` and LookupError on an unknown station id.
std::vector<eval::Forecast> predict_run(const models::Checkpoint& checkpoint, const std::filesystem::path& manifest,
                                        data::Hour issue_time, const std::vector<std::string>& station_ids = {});

/// `timestamp,station_id,pollutant,lead,prediction,truth`; missing truth is
/// an empty field.
void write_predictions_csv(const std::filesystem::path& path, const std::vector<eval::Forecast>& forecasts,
                           const std::vector<std::string>& station_ids, const std::string& pollutant);

/// Writes `json` to `path` with two-space indentation and a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& json);

} // namespace distnet::run
