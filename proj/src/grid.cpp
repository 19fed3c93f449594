#include "distnet/grid.hpp"

#include "distnet/errors.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <span>

namespace distnet::grid {

namespace {

constexpr double kEarthRadiusKm = 6371.0088;
constexpr double kDegToRad = std::numbers::pi / 180.0;

} // namespace

void GridSpec::validate() const {
    if (rows == 0 || cols == 0) {
        throw ConfigError("grid must have at least one row and one column");
    }
    if (!(cell_size > 0.0) || !std::isfinite(cell_size)) {
        throw ConfigError("grid cell size must be positive");
    }
}

StationSet::StationSet(GridSpec grid, std::vector<Station> stations)
    : grid_(grid), stations_(std::move(stations)) {}

std::size_t StationSet::index_of(const std::string& id) const {
    for (std::size_t i = 0; i < stations_.size(); ++i) {
        if (stations_[i].id == id) {
            return i;
        }
    }
    throw LookupError("unknown station '" + id + "'");
}

Point2 StationSet::position(std::size_t i) const {
    return to_grid_coordinates(grid_, stations_.at(i).latitude, stations_.at(i).longitude);
}

Point2 to_grid_coordinates(const GridSpec& grid, double latitude, double longitude) {
    return {(longitude - grid.origin_lon) / grid.cell_size, (latitude - grid.origin_lat) / grid.cell_size};
}

Point2 cell_center(const Cell& cell) {
    return {static_cast<double>(cell.col) + 0.5, static_cast<double>(cell.row) + 0.5};
}

StationSet assign_cells(const std::vector<StationLocation>& stations, const GridSpec& grid) {
    grid.validate();
    if (stations.empty()) {
        throw ConfigError("station set must contain at least one station");
    }
    std::set<std::string> ids;
    std::vector<Station> out;
    out.reserve(stations.size());
    for (const auto& s : stations) {
        if (!ids.insert(s.id).second) {
            throw ConfigError("duplicate station id '" + s.id + "'");
        }
        const Point2 p = to_grid_coordinates(grid, s.latitude, s.longitude);
        // Tolerate representation error right at a cell boundary.
        const double fy = std::floor(p.y + 1e-9);
        const double fx = std::floor(p.x + 1e-9);
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || fy < 0 || fx < 0 || fy >= static_cast<double>(grid.rows) ||
            fx >= static_cast<double>(grid.cols) || p.y < -1e-9 || p.x < -1e-9) {
            throw DataError("station '" + s.id + "' at (" + std::to_string(s.latitude) + ", " +
                            std::to_string(s.longitude) + ") lies outside the grid");
        }
        out.push_back({s.id, s.latitude, s.longitude, {static_cast<std::size_t>(fy), static_cast<std::size_t>(fx)}});
    }
    return StationSet(grid, std::move(out));
}

Offset equirectangular_offset(double lat_from, double lon_from, double lat_to, double lon_to) {
    const double mean_lat = 0.5 * (lat_from + lat_to) * kDegToRad;
    return {(lon_to - lon_from) * kDegToRad * std::cos(mean_lat) * kEarthRadiusKm,
            (lat_to - lat_from) * kDegToRad * kEarthRadiusKm};
}

double equirectangular_distance_km(double lat_from, double lon_from, double lat_to, double lon_to) {
    const auto o = equirectangular_offset(lat_from, lon_from, lat_to, lon_to);
    return std::hypot(o.east_km, o.north_km);
}

std::size_t bearing_sector(double east_km, double north_km, std::size_t sectors) {
    double bearing = std::atan2(east_km, north_km) / kDegToRad; // clockwise from north
    if (bearing < 0) {
        bearing += 360.0;
    }
    const double width = 360.0 / static_cast<double>(sectors);
    const auto s = static_cast<std::size_t>(std::floor((bearing + width / 2.0) / width));
    return s % sectors;
}

std::vector<std::vector<std::size_t>> sector_members(const StationSet& stations, std::size_t center, double radius_km,
                                                     std::size_t sectors) {
    if (center >= stations.size()) {
        throw BoundsError("neighbor aggregation: center index " + std::to_string(center) + " out of range");
    }
    if (!(radius_km > 0.0)) {
        throw ConfigError("neighbor aggregation radius must be positive");
    }
    std::vector<std::vector<std::size_t>> members(sectors);
    const auto& c = stations[center];
    for (std::size_t i = 0; i < stations.size(); ++i) {
        if (i == center) {
            continue;
        }
        const auto o = equirectangular_offset(c.latitude, c.longitude, stations[i].latitude, stations[i].longitude);
        const double d = std::hypot(o.east_km, o.north_km);
        if (d <= radius_km && d > 0.0) {
            members[bearing_sector(o.east_km, o.north_km, sectors)].push_back(i);
        }
    }
    return members;
}

std::vector<double> neighbor_aggregate(const std::vector<std::vector<std::size_t>>& members,
                                       std::span<const double> readings,
                                       const std::vector<std::vector<double>>& weather, std::size_t center) {
    const std::size_t n = weather.at(center).size();
    const std::size_t width = 1 + n;
    std::vector<double> out(members.size() * width, 0.0);
    for (std::size_t s = 0; s < members.size(); ++s) {
        double* dst = out.data() + s * width;
        std::size_t count = 0;
        for (auto i : members[s]) {
            if (std::isnan(readings[i])) {
                continue;
            }
            dst[0] += readings[i];
            for (std::size_t k = 0; k < n; ++k) {
                dst[1 + k] += weather[i][k];
            }
            ++count;
        }
        if (count == 0) {
            dst[0] = readings[center];
            for (std::size_t k = 0; k < n; ++k) {
                dst[1 + k] = weather[center][k];
            }
        } else {
            for (std::size_t k = 0; k < width; ++k) {
                dst[k] /= static_cast<double>(count);
            }
        }
    }
    return out;
}

std::vector<double> neighbor_aggregate(const StationSet& stations, std::span<const double> readings,
                                       const std::vector<std::vector<double>>& weather, std::size_t center,
                                       double radius_km, std::size_t sectors) {
    return neighbor_aggregate(sector_members(stations, center, radius_km, sectors), readings, weather, center);
}

} // namespace distnet::grid
