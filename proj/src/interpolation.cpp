#include "distnet/interpolation.hpp"

#include "distnet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace distnet::grid {

namespace {

double orient(const Point2& a, const Point2& b, const Point2& c) {
    return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

// > 0 when d lies inside the circumcircle of the counter-clockwise (a, b, c).
double incircle(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
    const double adx = a.x - d.x, ady = a.y - d.y;
    const double bdx = b.x - d.x, bdy = b.y - d.y;
    const double cdx = c.x - d.x, cdy = c.y - d.y;
    const double ad = adx * adx + ady * ady;
    const double bd = bdx * bdx + bdy * bdy;
    const double cd = cdx * cdx + cdy * cdy;
    return ad * (bdx * cdy - cdx * bdy) - bd * (adx * cdy - cdx * ady) + cd * (adx * bdy - bdx * ady);
}

bool lex_less(const Point2& a, const Point2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); }

// Sum of values in ascending order, so the result does not depend on the
// order stations were listed in.
double ordered_mean(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace

// ---- Triangulation ---------------------------------------------------------

Triangulation::Triangulation(std::vector<Point2> points) : points_(std::move(points)) {
    const std::size_t n = points_.size();
    if (n < 3) {
        return;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lex_less(points_[a], points_[b]); });
    for (std::size_t i = 1; i < n; ++i) {
        if (points_[order[i]] == points_[order[i - 1]]) {
            throw ContractError("triangulation: duplicate point");
        }
    }
    double extent = 0.0;
    for (const auto& p : points_) {
        extent = std::max({extent, std::fabs(p.x - points_[order[0]].x), std::fabs(p.y - points_[order[0]].y)});
    }
    const double eps_orient = 1e-12 * extent * extent;
    const double eps_circle = 1e-12 * extent * extent * extent * extent;

    const auto P = [&](std::size_t i) -> const Point2& { return points_[i]; };

    // First point off the line through the two leftmost points.
    std::size_t apex_pos = 2;
    while (apex_pos < n && std::fabs(orient(P(order[0]), P(order[1]), P(order[apex_pos]))) <= eps_orient) {
        ++apex_pos;
    }
    if (apex_pos == n) {
        return; // collinear
    }
    const std::size_t apex = order[apex_pos];
    const bool apex_left = orient(P(order[0]), P(order[1]), P(apex)) > 0;
    std::vector<std::size_t> hull;
    for (std::size_t i = 0; i + 1 < apex_pos; ++i) {
        const std::size_t a = order[i], b = order[i + 1];
        triangles_.push_back(apex_left ? std::array{a, b, apex} : std::array{b, a, apex});
    }
    if (apex_left) {
        hull.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(apex_pos));
    } else {
        hull.assign(order.rbegin() + static_cast<std::ptrdiff_t>(n - apex_pos), order.rend());
    }
    hull.push_back(apex);

    for (std::size_t i = apex_pos + 1; i < n; ++i) {
        const std::size_t q = order[i];
        const std::size_t m = hull.size();
        std::vector<char> visible(m);
        for (std::size_t e = 0; e < m; ++e) {
            visible[e] = orient(P(hull[e]), P(hull[(e + 1) % m]), P(q)) < -eps_orient;
        }
        std::size_t start = m;
        for (std::size_t e = 0; e < m; ++e) {
            if (visible[e] && !visible[(e + m - 1) % m]) {
                start = e;
                break;
            }
        }
        if (start == m) {
            throw ContractError("triangulation: sweep point sees no hull edge");
        }
        std::rotate(hull.begin(), hull.begin() + static_cast<std::ptrdiff_t>(start), hull.end());
        std::rotate(visible.begin(), visible.begin() + static_cast<std::ptrdiff_t>(start), visible.end());
        std::size_t run = 0;
        while (run < m && visible[run]) {
            triangles_.push_back({hull[run], q, hull[(run + 1) % m]});
            ++run;
        }
        std::vector<std::size_t> next{hull[0], q};
        next.insert(next.end(), hull.begin() + static_cast<std::ptrdiff_t>(run), hull.end());
        if (run == m) {
            throw ContractError("triangulation: every hull edge visible");
        }
        hull = std::move(next);
    }

    // Lawson flips until every interior edge is locally Delaunay.
    const std::size_t max_flips = 10 * triangles_.size() * triangles_.size() + 100;
    std::size_t flips = 0;
    bool changed = true;
    while (changed) {
        changed = false;
        build_neighbors();
        for (std::size_t t = 0; t < triangles_.size() && !changed; ++t) {
            for (std::size_t k = 0; k < 3 && !changed; ++k) {
                const long u = neighbors_[t][k];
                if (u < 0) {
                    continue;
                }
                const std::size_t c = triangles_[t][k];
                const std::size_t a = triangles_[t][(k + 1) % 3];
                const std::size_t b = triangles_[t][(k + 2) % 3];
                const auto& tu = triangles_[static_cast<std::size_t>(u)];
                std::size_t d = tu[0];
                for (auto v : tu) {
                    if (v != a && v != b) {
                        d = v;
                    }
                }
                if (incircle(P(c), P(a), P(b), P(d)) > eps_circle) {
                    triangles_[t] = {c, a, d};
                    triangles_[static_cast<std::size_t>(u)] = {c, d, b};
                    changed = true;
                    if (++flips > max_flips) {
                        throw ContractError("triangulation: edge flipping did not terminate");
                    }
                }
            }
        }
    }
    // Canonical triangle order: independent of flip history.
    for (auto& t : triangles_) {
        std::rotate(t.begin(), std::min_element(t.begin(), t.end()), t.end());
    }
    std::sort(triangles_.begin(), triangles_.end());
    build_neighbors();
}

void Triangulation::build_neighbors() {
    neighbors_.assign(triangles_.size(), {-1, -1, -1});
    std::map<std::pair<std::size_t, std::size_t>, std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
        for (std::size_t k = 0; k < 3; ++k) {
            const std::size_t a = triangles_[t][(k + 1) % 3];
            const std::size_t b = triangles_[t][(k + 2) % 3];
            const auto key = std::minmax(a, b);
            auto it = edges.find(key);
            if (it == edges.end()) {
                edges.emplace(key, std::make_pair(t, k));
            } else {
                neighbors_[t][k] = static_cast<long>(it->second.first);
                neighbors_[it->second.first][it->second.second] = static_cast<long>(t);
            }
        }
    }
}

std::array<double, 3> Triangulation::barycentric(std::size_t triangle, Point2 p) const {
    const auto& t = triangles_.at(triangle);
    const Point2& a = points_[t[0]];
    const Point2& b = points_[t[1]];
    const Point2& c = points_[t[2]];
    const double denom = (b.y - c.y) * (a.x - c.x) + (c.x - b.x) * (a.y - c.y);
    const double l1 = ((b.y - c.y) * (p.x - c.x) + (c.x - b.x) * (p.y - c.y)) / denom;
    const double l2 = ((c.y - a.y) * (p.x - c.x) + (a.x - c.x) * (p.y - c.y)) / denom;
    return {l1, l2, 1.0 - l1 - l2};
}

std::optional<Triangulation::Location> Triangulation::locate(Point2 p) const {
    std::optional<Location> best;
    double best_min = -1e-12;
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
        const auto b = barycentric(t, p);
        const double lo = std::min({b[0], b[1], b[2]});
        if (lo > best_min || (!best && lo >= best_min)) {
            best_min = lo;
            best = Location{t, b};
        }
    }
    return best;
}

std::vector<std::vector<std::size_t>> Triangulation::vertex_neighbors() const {
    std::vector<std::set<std::size_t>> adj(points_.size());
    for (const auto& t : triangles_) {
        for (std::size_t k = 0; k < 3; ++k) {
            adj[t[k]].insert(t[(k + 1) % 3]);
            adj[t[k]].insert(t[(k + 2) % 3]);
        }
    }
    std::vector<std::vector<std::size_t>> out(points_.size());
    for (std::size_t i = 0; i < adj.size(); ++i) {
        out[i].assign(adj[i].begin(), adj[i].end());
    }
    return out;
}

// ---- Clough-Tocher ---------------------------------------------------------

std::vector<std::array<double, 2>> estimate_gradients(const Triangulation& tri, std::span<const double> values) {
    const auto& pts = tri.points();
    const auto adj = tri.vertex_neighbors();
    std::vector<std::array<double, 2>> grads(pts.size(), {0.0, 0.0});
    for (std::size_t i = 0; i < pts.size(); ++i) {
        double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
        for (auto j : adj[i]) {
            const double dx = pts[j].x - pts[i].x;
            const double dy = pts[j].y - pts[i].y;
            const double w = 1.0 / (dx * dx + dy * dy);
            const double df = values[j] - values[i];
            a11 += w * dx * dx;
            a12 += w * dx * dy;
            a22 += w * dy * dy;
            b1 += w * dx * df;
            b2 += w * dy * df;
        }
        const double det = a11 * a22 - a12 * a12;
        if (adj[i].empty() || std::fabs(det) <= 1e-14 * (a11 * a22 + 1e-300)) {
            continue; // isolated vertex: flat
        }
        grads[i] = {(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det};
    }
    return grads;
}

double clough_tocher_evaluate(const Triangulation& tri, std::span<const double> values,
                              std::span<const std::array<double, 2>> gradients, const Triangulation::Location& loc) {
    const auto& t = tri.triangles()[loc.triangle];
    const auto& pts = tri.points();
    const Point2& p1 = pts[t[0]];
    const Point2& p2 = pts[t[1]];
    const Point2& p3 = pts[t[2]];
    const double e12x = p2.x - p1.x, e12y = p2.y - p1.y;
    const double e13x = p3.x - p1.x, e13y = p3.y - p1.y;
    const double e23x = p3.x - p2.x, e23y = p3.y - p2.y;
    const auto& g1 = gradients[t[0]];
    const auto& g2 = gradients[t[1]];
    const auto& g3 = gradients[t[2]];
    const double f1 = values[t[0]], f2 = values[t[1]], f3 = values[t[2]];

    // Directional derivatives along the edges at each end.
    const double df12 = g1[0] * e12x + g1[1] * e12y;
    const double df21 = -(g2[0] * e12x + g2[1] * e12y);
    const double df13 = g1[0] * e13x + g1[1] * e13y;
    const double df31 = -(g3[0] * e13x + g3[1] * e13y);
    const double df23 = g2[0] * e23x + g2[1] * e23y;
    const double df32 = -(g3[0] * e23x + g3[1] * e23y);

    // Bézier ordinates c_ijkl over (v1, v2, v3, centroid).
    const double c3000 = f1;
    const double c2100 = (df12 + 3 * c3000) / 3;
    const double c2010 = (df13 + 3 * c3000) / 3;
    const double c0300 = f2;
    const double c1200 = (df21 + 3 * c0300) / 3;
    const double c0210 = (df23 + 3 * c0300) / 3;
    const double c0030 = f3;
    const double c1020 = (df31 + 3 * c0030) / 3;
    const double c0120 = (df32 + 3 * c0030) / 3;

    const double c2001 = (c2100 + c2010 + c3000) / 3;
    const double c0201 = (c1200 + c0300 + c0210) / 3;
    const double c0021 = (c1020 + c0120 + c0030) / 3;

    // Cross-boundary derivative terms: linear normal derivative along each
    // edge, shared with the neighbor (-1/2 on the hull).
    std::array<double, 3> g{-0.5, -0.5, -0.5};
    for (std::size_t k = 0; k < 3; ++k) {
        const long nb = tri.neighbors()[loc.triangle][k];
        if (nb < 0) {
            continue;
        }
        const auto& tn = tri.triangles()[static_cast<std::size_t>(nb)];
        const Point2 centroid{(pts[tn[0]].x + pts[tn[1]].x + pts[tn[2]].x) / 3.0,
                              (pts[tn[0]].y + pts[tn[1]].y + pts[tn[2]].y) / 3.0};
        const auto c = tri.barycentric(loc.triangle, centroid);
        if (k == 0) {
            g[k] = (2 * c[2] + c[1] - 1) / (2 - 3 * c[2] - 3 * c[1]);
        } else if (k == 1) {
            g[k] = (2 * c[0] + c[2] - 1) / (2 - 3 * c[0] - 3 * c[2]);
        } else {
            g[k] = (2 * c[1] + c[0] - 1) / (2 - 3 * c[1] - 3 * c[0]);
        }
    }

    const double c0111 = (g[0] * (-c0300 + 3 * c0210 - 3 * c0120 + c0030) + (-c0300 + 2 * c0210 - c0120 + c0021 + c0201)) / 2;
    const double c1011 = (g[1] * (-c0030 + 3 * c1020 - 3 * c2010 + c3000) + (-c0030 + 2 * c1020 - c2010 + c2001 + c0021)) / 2;
    const double c1101 = (g[2] * (-c3000 + 3 * c2100 - 3 * c1200 + c0300) + (-c3000 + 2 * c2100 - c1200 + c2001 + c0201)) / 2;

    const double c1002 = (c1101 + c1011 + c2001) / 3;
    const double c0102 = (c1101 + c0111 + c0201) / 3;
    const double c0012 = (c1011 + c0111 + c0021) / 3;
    const double c0003 = (c1002 + c0102 + c0012) / 3;

    // Barycentrics in the micro-triangle: one of b1, b2, b3 is zero.
    const auto& b = loc.barycentric;
    const double lo = std::min({b[0], b[1], b[2]});
    const double b1 = b[0] - lo, b2 = b[1] - lo, b3 = b[2] - lo, b4 = 3 * lo;

    return b1 * b1 * b1 * c3000 + 3 * b1 * b1 * b2 * c2100 + 3 * b1 * b1 * b3 * c2010 + 3 * b1 * b1 * b4 * c2001 +
           3 * b1 * b2 * b2 * c1200 + 6 * b1 * b2 * b4 * c1101 + 3 * b1 * b3 * b3 * c1020 + 6 * b1 * b3 * b4 * c1011 +
           3 * b1 * b4 * b4 * c1002 + b2 * b2 * b2 * c0300 + 3 * b2 * b2 * b3 * c0210 + 3 * b2 * b2 * b4 * c0201 +
           3 * b2 * b3 * b3 * c0120 + 6 * b2 * b3 * b4 * c0111 + 3 * b2 * b4 * b4 * c0102 + b3 * b3 * b3 * c0030 +
           3 * b3 * b3 * b4 * c0021 + 3 * b3 * b4 * b4 * c0012 + b4 * b4 * b4 * c0003;
}

double idw(std::span<const Point2> points, std::span<const double> values, Point2 at) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double dx = points[i].x - at.x;
        const double dy = points[i].y - at.y;
        const double d2 = dx * dx + dy * dy;
        if (d2 == 0.0) {
            return values[i];
        }
        num += values[i] / d2;
        den += 1.0 / d2;
    }
    return num / den;
}

// ---- plan ------------------------------------------------------------------

InterpolationPlan::InterpolationPlan(const GridSpec& grid, std::span<const Point2> positions)
    : grid_(grid), input_count_(positions.size()) {
    grid.validate();
    if (positions.empty()) {
        throw ContractError("interpolation: no station readings");
    }
    std::vector<std::size_t> order(positions.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return lex_less(positions[a], positions[b]); });
    for (auto i : order) {
        if (sites_.empty() || !(sites_.back() == positions[i])) {
            sites_.push_back(positions[i]);
            members_.emplace_back();
        }
        members_.back().push_back(i);
    }
    if (sites_.size() >= 3) {
        Triangulation tri(sites_);
        if (!tri.empty()) {
            triangulation_ = std::move(tri);
        }
    }
    cells_.resize(grid.cell_count());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const auto r = static_cast<std::size_t>(std::clamp(std::floor(positions[i].y + 1e-9), 0.0,
                                                           static_cast<double>(grid.rows - 1)));
        const auto c = static_cast<std::size_t>(std::clamp(std::floor(positions[i].x + 1e-9), 0.0,
                                                           static_cast<double>(grid.cols - 1)));
        cells_[r * grid.cols + c].stations.push_back(i);
    }
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t c = 0; c < grid.cols; ++c) {
            auto& cell = cells_[r * grid.cols + c];
            if (!cell.stations.empty()) {
                cell.rule = CellRule::station;
                continue;
            }
            if (triangulation_) {
                if (auto loc = triangulation_->locate(cell_center({r, c}))) {
                    cell.rule = CellRule::hull;
                    cell.loc = *loc;
                }
            }
        }
    }
}

std::vector<double> InterpolationPlan::evaluate(std::span<const double> values) const {
    if (values.size() != input_count_) {
        throw ContractError("interpolation: expected " + std::to_string(input_count_) + " readings, got " +
                            std::to_string(values.size()));
    }
    for (double v : values) {
        if (!std::isfinite(v) || v < 0.0) {
            throw ContractError("interpolation: readings must be finite and non-negative");
        }
    }
    std::vector<double> site_values(sites_.size());
    for (std::size_t s = 0; s < sites_.size(); ++s) {
        std::vector<double> v;
        for (auto i : members_[s]) {
            v.push_back(values[i]);
        }
        site_values[s] = ordered_mean(std::move(v));
    }
    std::vector<std::array<double, 2>> gradients;
    if (triangulation_) {
        gradients = estimate_gradients(*triangulation_, site_values);
    }
    std::vector<double> out(cells_.size());
    for (std::size_t r = 0; r < grid_.rows; ++r) {
        for (std::size_t c = 0; c < grid_.cols; ++c) {
            const auto& cell = cells_[r * grid_.cols + c];
            double v = 0.0;
            switch (cell.rule) {
            case CellRule::station: {
                std::vector<double> here;
                for (auto i : cell.stations) {
                    here.push_back(values[i]);
                }
                v = ordered_mean(std::move(here));
                break;
            }
            case CellRule::hull:
                v = clough_tocher_evaluate(*triangulation_, site_values, gradients, cell.loc);
                break;
            case CellRule::outside:
                v = idw(sites_, site_values, cell_center({r, c}));
                break;
            }
            out[r * grid_.cols + c] = std::max(v, 0.0);
        }
    }
    return out;
}

Tensor interpolate_grid(const ScatterField& field, const GridSpec& grid) {
    if (field.positions.empty() || field.values.empty()) {
        throw ContractError("interpolate_grid: empty field");
    }
    if (field.positions.size() != field.values.size()) {
        throw ContractError("interpolate_grid: positions and readings differ in count");
    }
    InterpolationPlan plan(grid, field.positions);
    return Tensor::from({grid.rows, grid.cols}, plan.evaluate(field.values));
}

// ---- series ----------------------------------------------------------------

Tensor GridSeries::to_tensor() const { return Tensor::from({hours, rows, cols}, values); }

FillResult fill_series(const StationSet& stations, std::span<const double> readings, std::size_t hours) {
    const auto& grid = stations.grid();
    const std::size_t count = stations.size();
    if (hours == 0 || readings.size() != hours * count) {
        throw ContractError("fill_series: readings must be hours×stations");
    }
    std::vector<Point2> positions(count);
    for (std::size_t i = 0; i < count; ++i) {
        positions[i] = stations.position(i);
    }
    const std::size_t cells = grid.cell_count();
    FillResult result;
    result.series = {hours, grid.rows, grid.cols, std::vector<double>(hours * cells, 0.0)};
    std::vector<char> valid(hours, 0);
    std::map<std::vector<bool>, InterpolationPlan> plans;

    for (std::size_t h = 0; h < hours; ++h) {
        std::vector<bool> present(count);
        std::vector<Point2> pos;
        std::vector<double> vals;
        for (std::size_t i = 0; i < count; ++i) {
            const double v = readings[h * count + i];
            if (std::isnan(v)) {
                continue;
            }
            if (!std::isfinite(v) || v < 0.0) {
                throw DataError("station '" + stations[i].id + "' has an invalid reading at hour " + std::to_string(h));
            }
            present[i] = true;
            pos.push_back(positions[i]);
            vals.push_back(v);
        }
        if (vals.empty()) {
            continue;
        }
        auto it = plans.find(present);
        if (it == plans.end()) {
            it = plans.emplace(present, InterpolationPlan(grid, pos)).first;
        }
        const auto frame = it->second.evaluate(vals);
        std::copy(frame.begin(), frame.end(), result.series.values.begin() + static_cast<std::ptrdiff_t>(h * cells));
        valid[h] = 1;
    }

    std::vector<std::size_t> good;
    for (std::size_t h = 0; h < hours; ++h) {
        if (valid[h]) {
            good.push_back(h);
        }
    }
    if (good.empty()) {
        throw DataError("fill_series: no hour has any station reading");
    }
    auto& v = result.series.values;
    auto copy_hour = [&](std::size_t from, std::size_t to) {
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(from * cells), cells,
                    v.begin() + static_cast<std::ptrdiff_t>(to * cells));
    };
    if (good.front() > 0) {
        for (std::size_t h = 0; h < good.front(); ++h) {
            copy_hour(good.front(), h);
        }
        result.warnings.push_back("hours [0, " + std::to_string(good.front()) + ") have no readings; held at hour " +
                                  std::to_string(good.front()));
    }
    if (good.back() + 1 < hours) {
        for (std::size_t h = good.back() + 1; h < hours; ++h) {
            copy_hour(good.back(), h);
        }
        result.warnings.push_back("hours [" + std::to_string(good.back() + 1) + ", " + std::to_string(hours) +
                                  ") have no readings; held at hour " + std::to_string(good.back()));
    }
    for (std::size_t k = 0; k + 1 < good.size(); ++k) {
        const std::size_t a = good[k], b = good[k + 1];
        for (std::size_t h = a + 1; h < b; ++h) {
            const double w = static_cast<double>(h - a) / static_cast<double>(b - a);
            for (std::size_t c = 0; c < cells; ++c) {
                v[h * cells + c] = (1.0 - w) * v[a * cells + c] + w * v[b * cells + c];
            }
        }
    }
    return result;
}

} // namespace distnet::grid
