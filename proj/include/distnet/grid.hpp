#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace distnet::grid {

struct GridSpec {
    std::size_t rows = 0; // M, northward from the origin
    std::size_t cols = 0; // N, eastward from the origin
    double origin_lat = 0.0;
    double origin_lon = 0.0;
    double cell_size = 0.1; // degrees

    /// Throws ConfigError unless rows·cols ≥ 1 and cell_size > 0.
    void validate() const;
    std::size_t cell_count() const { return rows * cols; }
};

struct Cell {
    std::size_t row = 0;
    std::size_t col = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
};

struct StationLocation {
    std::string id;
    double latitude = 0.0;
    double longitude = 0.0;
};

struct Station {
    std::string id;
    double latitude = 0.0;
    double longitude = 0.0;
    Cell cell;
};

/// Continuous grid coordinates: x = columns, y = rows, both in cell units
/// measured from the south-west corner. Cell (r, c) covers [c, c+1)×[r, r+1).
struct Point2 {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point2&, const Point2&) = default;
};

class StationSet {
public:
    StationSet() = default;
    StationSet(GridSpec grid, std::vector<Station> stations);

    const GridSpec& grid() const { return grid_; }
    const std::vector<Station>& stations() const { return stations_; }
    std::size_t size() const { return stations_.size(); }
    const Station& operator[](std::size_t i) const { return stations_[i]; }
    /// Index of the station with `id`; throws LookupError.
    std::size_t index_of(const std::string& id) const;
    Point2 position(std::size_t i) const;

private:
    GridSpec grid_;
    std::vector<Station> stations_;
};

/// Maps each station to the cell holding it (floor of offset / cell size).
/// Throws DataError naming the station when it falls outside the grid, and
/// ConfigError on duplicate ids or an empty list.
StationSet assign_cells(const std::vector<StationLocation>& stations, const GridSpec& grid);

Point2 to_grid_coordinates(const GridSpec& grid, double latitude, double longitude);
Point2 cell_center(const Cell& cell);

/// Equirectangular east/north offset in km from `from` to `to`.
struct Offset {
    double east_km = 0.0;
    double north_km = 0.0;
};
Offset equirectangular_offset(double lat_from, double lon_from, double lat_to, double lon_to);
double equirectangular_distance_km(double lat_from, double lon_from, double lat_to, double lon_to);

/// Sector of a bearing measured clockwise from north; sector 0 spans
/// [-22.5°, 22.5°), sector 2 is centered on east.
std::size_t bearing_sector(double east_km, double north_km, std::size_t sectors = 8);

/// Members of each azimuthal sector around `center` within `radius_km`.
std::vector<std::vector<std::size_t>> sector_members(const StationSet& stations, std::size_t center, double radius_km,
                                                     std::size_t sectors = 8);

/// Per sector: mean pollutant reading and mean of each weather feature over the
/// members present at this hour; an empty sector takes the center's values.
/// `readings[i]` is NaN when station i has no reading; `weather[i]` holds the
/// n weather features at station i's cell. Output is sector-major,
/// sectors × (1 + n).
std::vector<double> neighbor_aggregate(const std::vector<std::vector<std::size_t>>& members,
                                       std::span<const double> readings,
                                       const std::vector<std::vector<double>>& weather, std::size_t center);

/// Convenience overload computing the sector membership on the fly.
std::vector<double> neighbor_aggregate(const StationSet& stations, std::span<const double> readings,
                                       const std::vector<std::vector<double>>& weather, std::size_t center,
                                       double radius_km, std::size_t sectors = 8);

} // namespace distnet::grid
