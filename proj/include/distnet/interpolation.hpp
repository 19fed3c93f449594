#pragma once

// Scattered-station interpolation onto the grid: Delaunay triangulation with a
// C¹ Clough-Tocher cubic inside the stations' convex hull, inverse-distance
// weighting outside it, station readings forced at station-bearing cells.

#include "distnet/grid.hpp"
#include "distnet/tensor.hpp"

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace distnet::grid {

/// Delaunay triangulation of distinct points, built by a lexicographic sweep
/// followed by Lawson edge flips. Empty when all points are collinear.
class Triangulation {
public:
    explicit Triangulation(std::vector<Point2> points);

    const std::vector<Point2>& points() const { return points_; }
    /// Counter-clockwise vertex triples.
    const std::vector<std::array<std::size_t, 3>>& triangles() const { return triangles_; }
    /// neighbors()[t][k]: triangle across the edge opposite vertex k, or -1.
    const std::vector<std::array<long, 3>>& neighbors() const { return neighbors_; }
    bool empty() const { return triangles_.empty(); }

    struct Location {
        std::size_t triangle = 0;
        std::array<double, 3> barycentric{};
    };
    /// Triangle containing `p` (boundary inclusive), preferring the one where
    /// `p` lies deepest.
    std::optional<Location> locate(Point2 p) const;
    std::array<double, 3> barycentric(std::size_t triangle, Point2 p) const;
    /// Sorted adjacency lists.
    std::vector<std::vector<std::size_t>> vertex_neighbors() const;

private:
    void build_neighbors();

    std::vector<Point2> points_;
    std::vector<std::array<std::size_t, 3>> triangles_;
    std::vector<std::array<long, 3>> neighbors_;
};

/// Vertex gradients by weighted least squares over Delaunay neighbors
/// (weights 1/d²); exact for affine data.
std::vector<std::array<double, 2>> estimate_gradients(const Triangulation& tri, std::span<const double> values);

/// Clough-Tocher value at a location given vertex values and gradients.
double clough_tocher_evaluate(const Triangulation& tri, std::span<const double> values,
                              std::span<const std::array<double, 2>> gradients, const Triangulation::Location& loc);

/// Inverse-distance weighting with power 2.
double idw(std::span<const Point2> points, std::span<const double> values, Point2 at);

/// Readings of one pollutant at one hour.
struct ScatterField {
    std::vector<Point2> positions;
    std::vector<double> values;
};

/// Precomputed geometry for one set of station positions on one grid. Reused
/// across hours with the same reporting stations.
class InterpolationPlan {
public:
    InterpolationPlan(const GridSpec& grid, std::span<const Point2> positions);

    /// Grid values (row-major M×N) for readings ordered like the positions
    /// given at construction.
    std::vector<double> evaluate(std::span<const double> values) const;

    std::size_t site_count() const { return sites_.size(); }
    bool uses_triangulation() const { return triangulation_.has_value(); }
    const std::optional<Triangulation>& triangulation() const { return triangulation_; }

    enum class CellRule { station, hull, outside };
    CellRule rule(std::size_t cell) const { return cells_[cell].rule; }

private:
    struct CellPlan {
        CellRule rule = CellRule::outside;
        std::vector<std::size_t> stations; // input indices in this cell
        Triangulation::Location loc;
    };

    GridSpec grid_;
    std::size_t input_count_ = 0;
    std::vector<Point2> sites_;                   // merged, canonically sorted
    std::vector<std::vector<std::size_t>> members_; // input indices per site
    std::optional<Triangulation> triangulation_;
    std::vector<CellPlan> cells_;
};

/// Interpolates one field onto every cell center. Throws ContractError on an
/// empty field or negative/non-finite readings.
Tensor interpolate_grid(const ScatterField& field, const GridSpec& grid);

/// Hourly grid series, row-major hours×M×N.
struct GridSeries {
    std::size_t hours = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    double at(std::size_t hour, std::size_t row, std::size_t col) const {
        return values[(hour * rows + row) * cols + col];
    }
    Tensor to_tensor() const;
};

struct FillResult {
    GridSeries series;
    std::vector<std::string> warnings;
};

/// Interpolates each hour independently. `readings` is hours×stations with NaN
/// for a missing reading. Hours without any reading are filled per cell by
/// linear interpolation in time between the nearest valid hours; gaps at the
/// series ends are held at the nearest valid hour and reported as warnings.
/// Throws DataError when no hour has a reading.
FillResult fill_series(const StationSet& stations, std::span<const double> readings, std::size_t hours);

} // namespace distnet::grid
