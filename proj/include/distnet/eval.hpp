#pragma once

// Forecast metrics, horizon segments, overlapping-forecast bands,
// interpolation scoring, encoder-length sweeps and report files.

#include "distnet/interpolation.hpp"
#include "distnet/models.hpp"
#include "distnet/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace distnet::eval {

/// Mean of 2|p − y| / max(|p| + |y|, ε) over all pairs. Throws ContractError
/// on empty or mismatched input.
double smape_metric(std::span<const double> preds, std::span<const double> truths, double epsilon = 1.0);
/// Root mean squared error over all pairs. Throws ContractError on empty or
/// mismatched input.
double rmse_metric(std::span<const double> preds, std::span<const double> truths);

/// One issued forecast with its truth.
struct Forecast {
    std::size_t station = 0;
    data::Hour first_target = 0;
    std::vector<double> prediction; // τ values, floored at 0
    std::vector<double> truth;      // τ values
};

struct SegmentMetric {
    std::size_t index = 0;   // 0-based
    std::size_t start_h = 0; // first step, inclusive
    std::size_t end_h = 0;   // last step, exclusive
    double smape = 0.0;
    double rmse = 0.0;
    std::size_t n = 0;
};

/// Metrics restricted to steps [s·k, s·k + s), pooled over all forecasts.
/// Throws ConfigError when τ is not a multiple of the segment length and
/// ContractError on empty or ragged input.
std::vector<SegmentMetric> segmental_metrics(const std::vector<Forecast>& forecasts, std::size_t segment_hours = 6,
                                             double epsilon = 1.0);

struct StationMetric {
    std::string station_id;
    double smape = 0.0;
    double rmse = 0.0;
    std::size_t n = 0;
};

struct EvalResult {
    std::string pollutant;
    double epsilon = 1.0;
    std::size_t horizon = 0;
    std::vector<StationMetric> stations; // stations with at least one forecast, input order
    double smape = 0.0;                  // pooled over every (forecast, step)
    double rmse = 0.0;
    std::size_t n = 0;
    std::vector<SegmentMetric> segments;
};

EvalResult evaluate_forecasts(const std::string& pollutant, const std::vector<std::string>& station_ids,
                              const std::vector<Forecast>& forecasts, double epsilon = 1.0,
                              std::size_t segment_hours = 6);

/// Runs the model over each window; predictions are floored at 0.
std::vector<Forecast> forecast_windows(const models::Model& model, const std::vector<features::SampleWindow>& windows);

struct BandPoint {
    data::Hour timestamp = 0;
    std::size_t station = 0;
    double truth = 0.0;
    double mu = 0.0;
    double sigma = 0.0; // population standard deviation
    std::size_t count = 0;
    bool covered = false; // |truth − μ| ≤ 2σ
};

/// Mean and spread of every forecast covering each (station, hour), sorted by
/// station then time.
std::vector<BandPoint> band_aggregate(const std::vector<Forecast>& forecasts);
/// Fraction of points with covered = true; 0 for an empty input.
double band_coverage(const std::vector<BandPoint>& bands);

/// Writes metrics.csv, segments.csv, bands.csv, report.json (ε, summary and
/// `config`) and SVG charts. Throws IoError when the directory is unwritable.
void emit_report(const EvalResult& result, const std::vector<BandPoint>& bands,
                 const std::vector<std::string>& station_ids, const std::filesystem::path& dir,
                 const nlohmann::json& config);

/// Per-hour RMSE between two hours×M×N grid series over the cells selected by
/// `mask` (M×N, nonzero = scored). Throws ContractError on a shape mismatch or
/// an empty mask.
std::vector<double> interpolation_score(std::span<const double> interpolated, std::span<const double> truth,
                                        std::size_t hours, const grid::GridSpec& grid,
                                        const std::vector<char>& mask);

/// Fills each cell with the reading of the nearest reporting station (ties by
/// station order); the reference the cubic interpolation is compared against.
grid::GridSeries nearest_neighbor_fill(const grid::StationSet& stations, std::span<const double> readings,
                                       std::size_t hours);

struct SweepRow {
    std::size_t encoder_length = 0;
    double smape = 0.0;
    double rmse = 0.0;
    std::size_t n = 0;
    std::size_t epochs = 0;
};

/// Trains and tests one model per encoder length with identical seeds. The
/// window options supply the horizon, cutoff and stride; the model config's
/// encoder length is overridden per row. At most `max_train_windows` evenly
/// spaced training windows are used (all when 0). Throws DataError when the
/// series is too short for a length or a split is empty.
std::vector<SweepRow> encoder_length_sweep(const std::shared_ptr<const features::PreparedSeries>& series,
                                           const std::vector<std::size_t>& lengths, models::ModelKind kind,
                                           const models::ModelConfig& model_config,
                                           const training::TrainConfig& train_config,
                                           const features::WindowOptions& window_options, std::uint64_t seed,
                                           std::size_t max_train_windows = 0);
/// `encoder_length,smape,rmse,n,epochs`.
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

} // namespace distnet::eval
