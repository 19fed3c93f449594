#pragma once

// Feature construction: min-max normalization fitted on the training range,
// statistical features of the target series, future time ids, the gridded
// model inputs, and sliding-window sample extraction.

#include "distnet/data.hpp"
#include "distnet/grid.hpp"
#include "distnet/tensor.hpp"

#include <json.hpp>

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace distnet::features {

using data::Hour;
using data::Pollutant;

// ---- normalization ---------------------------------------------------------

struct FeatureRange {
    std::string name;
    double min = 0.0;
    double max = 1.0;

    double transform(double x) const { return (x - min) / (max - min); }
    double inverse(double y) const { return y * (max - min) + min; }
};

/// Fits (min, max) over the finite values; NaN entries are skipped. Throws
/// ConfigError naming the feature when fewer than two distinct values exist.
FeatureRange fit_range(const std::string& name, std::span<const double> values);

/// Per-feature ranges learned on the training split. Frozen once fitted.
class NormalizationSpec {
public:
    void add(FeatureRange range);
    /// Throws LookupError.
    const FeatureRange& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    const std::vector<FeatureRange>& ranges() const { return ranges_; }

    nlohmann::json to_json() const;
    static NormalizationSpec from_json(const nlohmann::json& j);

private:
    std::vector<FeatureRange> ranges_;
};

struct MinMaxResult {
    std::vector<double> values;
    FeatureRange range;
};

/// Fits on `values` unless `frozen` is given, then transforms them.
MinMaxResult minmax_fit_transform(const std::string& name, std::span<const double> values,
                                  const FeatureRange* frozen = nullptr);

// ---- statistical and time features -----------------------------------------

struct StatsConfig {
    std::vector<std::size_t> lags{1, 3, 6};
    std::vector<std::size_t> mean_windows{3, 6, 12, 24};
    std::vector<std::size_t> std_windows{6, 24};

    std::size_t gamma() const { return lags.size() + mean_windows.size() + std_windows.size(); }
    std::size_t history() const;
};

/// Features of `series` ending at hour `t`: differences x[t] - x[t-lag],
/// rolling means and population standard deviations over the trailing
/// windows. Hours before the series start repeat its first value.
std::vector<double> statistical_features(std::span<const double> series, std::size_t t, const StatsConfig& cfg = {});

struct TimeIds {
    int hour = 0;    // [0, 24)
    int weekday = 0; // [0, 7), Monday = 0
    friend bool operator==(const TimeIds&, const TimeIds&) = default;
};

/// Ids for the `tau` hours starting at `start`.
std::vector<TimeIds> time_features(Hour start, std::size_t tau);

// ---- prepared series -------------------------------------------------------

/// Weather channels after encoding: four min-max scaled scalars, wind direction
/// as (sin+1)/2 and (cos+1)/2, and a one-hot weather condition.
inline constexpr std::size_t kEncodedWeather = 4 + 2 + data::kConditionVocab;
/// Channel 0 is the pollutant, followed by the encoded weather.
inline constexpr std::size_t kChannels = 1 + kEncodedWeather;

struct PrepareOptions {
    Hour train_cutoff = 0;
    StatsConfig stats;
    /// Longest run of missing hours per station filled by linear interpolation
    /// before gridding; longer gaps stay missing.
    std::size_t max_gap_fill = 6;
    /// Neighborhood used by the neighbor aggregation baseline.
    double neighbor_radius_km = 10.0;
    std::size_t sectors = 8;
    /// When false, a feature that is constant over the training range gets the
    /// unit range [v, v + 1] and a warning instead of a ConfigError.
    bool strict_normalization = true;
};

/// Everything the models read, computed once per (dataset, pollutant).
class PreparedSeries {
public:
    /// Fits normalization on hours ≤ train_cutoff unless `frozen` is given.
    /// Throws DataError when no hour lies in the training range.
    static std::shared_ptr<const PreparedSeries> prepare(const data::Dataset& dataset, Pollutant pollutant,
                                                         const PrepareOptions& options,
                                                         const NormalizationSpec* frozen = nullptr);

    Pollutant pollutant() const { return pollutant_; }
    const grid::StationSet& stations() const { return stations_; }
    const grid::GridSpec& grid() const { return stations_.grid(); }
    Hour start() const { return start_; }
    std::size_t hours() const { return hours_; }
    std::size_t channels() const { return kChannels; }
    const StatsConfig& stats_config() const { return options_.stats; }
    const PrepareOptions& options() const { return options_; }
    const NormalizationSpec& normalization() const { return normalization_; }
    /// Range of the target pollutant (its inverse maps model outputs back to
    /// the original scale).
    const FeatureRange& target_range() const { return normalization_.get(data::pollutant_name(pollutant_)); }
    const std::vector<std::string>& warnings() const { return warnings_; }

    /// Normalized frame at hour h: M×N×C, row-major, channels last.
    const double* frame(std::size_t h) const { return frames_.data() + h * grid().cell_count() * kChannels; }
    double value(std::size_t h, std::size_t row, std::size_t col, std::size_t channel) const {
        return frame(h)[(row * grid().cols + col) * kChannels + channel];
    }
    /// Interpolated pollutant grid in the original scale, hours×M×N.
    const std::vector<double>& pollutant_grid() const { return grid_values_; }

    /// Station reading after short-gap filling, original scale; NaN if missing.
    double station_reading(std::size_t h, std::size_t s) const { return readings_[h * stations_.size() + s]; }
    /// Normalized station series used for statistics: the filled reading, or
    /// the station cell's gridded value where the reading is missing.
    double station_series(std::size_t h, std::size_t s) const { return series_[s * hours_ + h]; }
    /// γ statistical features of station s at hour h.
    std::span<const double> stats(std::size_t h, std::size_t s) const {
        const std::size_t g = options_.stats.gamma();
        return {stats_.data() + (h * stations_.size() + s) * g, g};
    }
    /// Sector membership around each station for the neighbor baseline.
    const std::vector<std::vector<std::size_t>>& sector_members(std::size_t s) const { return members_[s]; }

private:
    Pollutant pollutant_ = Pollutant::pm25;
    grid::StationSet stations_;
    Hour start_ = 0;
    std::size_t hours_ = 0;
    PrepareOptions options_;
    NormalizationSpec normalization_;
    std::vector<std::string> warnings_;
    std::vector<double> frames_;
    std::vector<double> grid_values_;
    std::vector<double> readings_;
    std::vector<double> series_;
    std::vector<double> stats_;
    std::vector<std::vector<std::vector<std::size_t>>> members_;
};

/// Fills interior runs of at most `max_gap` NaNs by linear interpolation
/// between the bounding readings. Returns the number of values filled.
std::size_t fill_short_gaps(std::span<double> series, std::size_t max_gap);

// ---- windows ---------------------------------------------------------------

/// One forecasting sample: T encoder hours then τ target hours at one station.
/// Inputs are read from the shared prepared series on demand.
struct SampleWindow {
    std::shared_ptr<const PreparedSeries> series;
    std::size_t station = 0;
    std::size_t start = 0; // first encoder hour, as an index into the series
    std::size_t encoder_length = 0;
    std::size_t horizon = 0;
    std::vector<double> target;     // τ readings, original scale
    std::vector<TimeIds> time_ids;  // τ future hours

    grid::Cell cell() const { return series->stations()[station].cell; }
    Pollutant pollutant() const { return series->pollutant(); }
    std::size_t target_begin() const { return start + encoder_length; }
    Hour issue_time() const { return series->start() + static_cast<Hour>(target_begin()) - 1; }
    Hour first_target_time() const { return series->start() + static_cast<Hour>(target_begin()); }

    /// X: T×M×N×C normalized frames.
    Tensor encoder_frames() const;
    /// s: T×γ.
    Tensor stats() const;
    /// Target cell's raw channels: T×C.
    Tensor spot_features() const;
    /// Last reading at or before the issue time within the encoder range,
    /// falling back to the gridded value at the station cell.
    double last_observed() const;
};

struct WindowSet {
    std::vector<SampleWindow> train;
    std::vector<SampleWindow> validation;
    std::vector<SampleWindow> test;
    std::size_t candidates = 0;      // (L - T - τ + 1)·stations
    std::size_t dropped_gaps = 0;    // targets with missing readings
    std::size_t dropped_straddle = 0; // targets on both sides of a split boundary
};

struct WindowOptions {
    std::size_t encoder_length = 72;
    std::size_t horizon = 48;
    /// Every target hour ≤ cutoff → training range; every target hour > cutoff → test.
    Hour train_cutoff = 0;
    /// Tail of the training range held out for validation.
    double validation_fraction = 0.1;
    std::size_t stride = 1;
};

/// Slides over every station. Throws DataError when the series is shorter
/// than T + τ.
WindowSet build_windows(const std::shared_ptr<const PreparedSeries>& series, const WindowOptions& options);

} // namespace distnet::features
