#pragma once

// Raw dataset ingestion: station registry, hourly pollution and weather CSVs,
// and the JSON manifest tying them to a grid and a train/test cutoff.

#include "distnet/grid.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace distnet::data {

enum class Pollutant { pm25 = 0, pm10 = 1, o3 = 2 };
inline constexpr std::size_t kPollutantCount = 3;

std::string pollutant_name(Pollutant p);
/// Throws ConfigError on an unknown name.
Pollutant parse_pollutant(std::string_view name);

/// Hours since 1970-01-01T00:00 UTC.
using Hour = std::int64_t;

/// Accepts `YYYY-MM-DDTHH:MM[:SS]` with an optional trailing `Z`, or a space
/// instead of `T`. Throws DataError unless the time is aligned to the hour.
Hour parse_timestamp(std::string_view text);
/// `YYYY-MM-DDTHH:00:00`.
std::string format_timestamp(Hour hour);
int hour_of_day(Hour hour);
/// 0 = Monday … 6 = Sunday.
int day_of_week(Hour hour);

/// Raw weather fields per cell and hour, in CSV column order.
enum WeatherField : std::size_t { temperature, pressure, humidity, wind_speed, wind_direction, condition_id };
inline constexpr std::size_t kWeatherFields = 6;
inline constexpr std::size_t kConditionVocab = 4;
inline constexpr std::array<const char*, kWeatherFields> kWeatherFieldNames{
    "temperature", "pressure", "humidity", "wind_speed", "wind_direction", "condition_id"};

/// Hourly observations over a contiguous time range.
struct Dataset {
    grid::StationSet stations;
    Hour start = 0;
    std::size_t hours = 0;
    /// Per pollutant, hours×stations; NaN marks a missing reading.
    std::array<std::vector<double>, kPollutantCount> pollution;
    /// hours×M×N×kWeatherFields.
    std::vector<double> weather;

    double reading(Pollutant p, std::size_t hour, std::size_t station) const {
        return pollution[static_cast<std::size_t>(p)][hour * stations.size() + station];
    }
    double weather_at(std::size_t hour, std::size_t row, std::size_t col, std::size_t field) const {
        const auto& g = stations.grid();
        return weather[((hour * g.rows + row) * g.cols + col) * kWeatherFields + field];
    }
};

struct Manifest {
    std::filesystem::path stations_csv;
    std::filesystem::path pollution_csv;
    std::filesystem::path weather_csv;
    std::optional<std::filesystem::path> truth_csv; // synthetic ground truth grid
    grid::GridSpec grid;
    Hour train_cutoff = 0;
    std::vector<Pollutant> pollutants{Pollutant::pm25};
};

/// Relative paths are resolved against the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path);
/// Writes paths relative to the manifest's directory when possible.
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
nlohmann::json grid_to_json(const grid::GridSpec& grid);
grid::GridSpec grid_from_json(const nlohmann::json& j);

/// `station_id,latitude,longitude`.
std::vector<grid::StationLocation> read_station_csv(const std::filesystem::path& path);
void write_station_csv(const std::filesystem::path& path, const grid::StationSet& stations);

/// Loads every file named by the manifest. The weather file defines the time
/// axis and must cover every cell for every hour in its range; pollution rows
/// outside that range or naming unknown stations are DataErrors.
Dataset load_dataset(const Manifest& manifest);

/// `timestamp,station_id,pm25,pm10,o3` with empty fields for missing readings.
void write_pollution_csv(const std::filesystem::path& path, const Dataset& dataset);
/// `timestamp,row,col,temperature,pressure,humidity,wind_speed,wind_direction,condition_id`.
void write_weather_csv(const std::filesystem::path& path, const Dataset& dataset);
/// `timestamp,row,col,value` for an hours×M×N series starting at `start`.
void write_grid_csv(const std::filesystem::path& path, Hour start, std::size_t hours, const grid::GridSpec& grid,
                    const std::vector<double>& values);
/// Reads a file written by write_grid_csv; returns hours×M×N values.
std::vector<double> read_grid_csv(const std::filesystem::path& path, Hour start, std::size_t hours,
                                  const grid::GridSpec& grid);

/// Shortest round-trip decimal form of a double.
std::string format_number(double value);

} // namespace distnet::data
