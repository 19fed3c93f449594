#include "distnet/eval.hpp"

#include "distnet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace distnet::eval {

namespace {

void check_pairs(std::span<const double> preds, std::span<const double> truths, const char* what) {
    if (preds.empty() || preds.size() != truths.size()) {
        throw ContractError(std::string(what) + ": " + std::to_string(preds.size()) + " predictions for " +
                            std::to_string(truths.size()) + " truths");
    }
}

double smape_term(double p, double y, double eps) { return 2.0 * std::fabs(p - y) / std::max(std::fabs(p) + std::fabs(y), eps); }

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write '" + path.string() + "'");
    }
    return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

} // namespace

double smape_metric(std::span<const double> preds, std::span<const double> truths, double epsilon) {
    check_pairs(preds, truths, "smape_metric");
    if (!(epsilon > 0.0)) {
        throw ContractError("smape_metric: epsilon must be positive");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        total += smape_term(preds[i], truths[i], epsilon);
    }
    return total / static_cast<double>(preds.size());
}

double rmse_metric(std::span<const double> preds, std::span<const double> truths) {
    check_pairs(preds, truths, "rmse_metric");
    double total = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double d = preds[i] - truths[i];
        total += d * d;
    }
    return std::sqrt(total / static_cast<double>(preds.size()));
}

std::vector<SegmentMetric> segmental_metrics(const std::vector<Forecast>& forecasts, std::size_t segment_hours,
                                             double epsilon) {
    if (forecasts.empty()) {
        throw ContractError("segmental_metrics: no forecasts");
    }
    const std::size_t tau = forecasts.front().prediction.size();
    if (segment_hours == 0 || tau == 0 || tau % segment_hours != 0) {
        throw ConfigError("segmental_metrics: horizon " + std::to_string(tau) + " is not a multiple of segment length " +
                          std::to_string(segment_hours));
    }
    for (const auto& f : forecasts) {
        if (f.prediction.size() != tau || f.truth.size() != tau) {
            throw ContractError("segmental_metrics: forecasts have different horizons");
        }
    }
    std::vector<SegmentMetric> out;
    for (std::size_t k = 0; k < tau / segment_hours; ++k) {
        std::vector<double> p, y;
        for (const auto& f : forecasts) {
            for (std::size_t t = k * segment_hours; t < (k + 1) * segment_hours; ++t) {
                p.push_back(f.prediction[t]);
                y.push_back(f.truth[t]);
            }
        }
        out.push_back({k, k * segment_hours, (k + 1) * segment_hours, smape_metric(p, y, epsilon), rmse_metric(p, y),
                       p.size()});
    }
    return out;
}

EvalResult evaluate_forecasts(const std::string& pollutant, const std::vector<std::string>& station_ids,
                              const std::vector<Forecast>& forecasts, double epsilon, std::size_t segment_hours) {
    if (forecasts.empty()) {
        throw ContractError("evaluate: no forecasts");
    }
    EvalResult r;
    r.pollutant = pollutant;
    r.epsilon = epsilon;
    r.horizon = forecasts.front().prediction.size();
    std::vector<std::vector<double>> sp(station_ids.size()), sy(station_ids.size());
    std::vector<double> p, y;
    for (const auto& f : forecasts) {
        if (f.station >= station_ids.size()) {
            throw ContractError("evaluate: forecast for unknown station index " + std::to_string(f.station));
        }
        sp[f.station].insert(sp[f.station].end(), f.prediction.begin(), f.prediction.end());
        sy[f.station].insert(sy[f.station].end(), f.truth.begin(), f.truth.end());
        p.insert(p.end(), f.prediction.begin(), f.prediction.end());
        y.insert(y.end(), f.truth.begin(), f.truth.end());
    }
    for (std::size_t s = 0; s < station_ids.size(); ++s) {
        if (!sp[s].empty()) {
            r.stations.push_back({station_ids[s], smape_metric(sp[s], sy[s], epsilon), rmse_metric(sp[s], sy[s]),
                                  sp[s].size()});
        }
    }
    r.smape = smape_metric(p, y, epsilon);
    r.rmse = rmse_metric(p, y);
    r.n = p.size();
    r.segments = segmental_metrics(forecasts, segment_hours, epsilon);
    return r;
}

std::vector<Forecast> forecast_windows(const models::Model& model, const std::vector<features::SampleWindow>& windows) {
    std::vector<Forecast> out;
    out.reserve(windows.size());
    for (const auto& w : windows) {
        out.push_back({w.station, w.first_target_time(), model.predict(w), w.target});
    }
    return out;
}

// ---- bands -----------------------------------------------------------------

std::vector<BandPoint> band_aggregate(const std::vector<Forecast>& forecasts) {
    struct Acc {
        std::vector<double> values;
        double truth = 0.0;
    };
    std::map<std::pair<std::size_t, data::Hour>, Acc> acc;
    for (const auto& f : forecasts) {
        for (std::size_t t = 0; t < f.prediction.size(); ++t) {
            auto& a = acc[{f.station, f.first_target + static_cast<data::Hour>(t)}];
            a.values.push_back(f.prediction[t]);
            a.truth = f.truth[t];
        }
    }
    std::vector<BandPoint> out;
    out.reserve(acc.size());
    for (const auto& [key, a] : acc) {
        double mu = 0.0;
        for (double v : a.values) mu += v;
        mu /= static_cast<double>(a.values.size());
        double var = 0.0;
        for (double v : a.values) var += (v - mu) * (v - mu);
        const double sigma = std::sqrt(var / static_cast<double>(a.values.size()));
        out.push_back({key.second, key.first, a.truth, mu, sigma, a.values.size(),
                       std::fabs(a.truth - mu) <= 2.0 * sigma});
    }
    return out;
}

double band_coverage(const std::vector<BandPoint>& bands) {
    if (bands.empty()) {
        return 0.0;
    }
    std::size_t covered = 0;
    for (const auto& b : bands) covered += b.covered ? 1 : 0;
    return static_cast<double>(covered) / static_cast<double>(bands.size());
}

// ---- SVG -------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string file_safe(const std::string& s) {
    std::string out;
    for (char c : s) {
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    }
    return out;
}

struct Frame {
    double width = 800, height = 360, left = 60, right = 20, top = 40, bottom = 50;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
    double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

void svg_open(std::ostream& out, const Frame& f, const std::string& title) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(f.width) << "\" height=\"" << fmt(f.height)
        << "\" viewBox=\"0 0 " << fmt(f.width) << ' ' << fmt(f.height) << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << fmt(f.width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"15\">" << escape_xml(title) << "</text>\n";
}

void svg_axes(std::ostream& out, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
    out << "<g stroke=\"black\" stroke-width=\"1\">\n"
        << "<line x1=\"" << fmt(f.left) << "\" y1=\"" << fmt(f.height - f.bottom) << "\" x2=\""
        << fmt(f.width - f.right) << "\" y2=\"" << fmt(f.height - f.bottom) << "\"/>\n"
        << "<line x1=\"" << fmt(f.left) << "\" y1=\"" << fmt(f.top) << "\" x2=\"" << fmt(f.left) << "\" y2=\""
        << fmt(f.height - f.bottom) << "\"/>\n</g>\n";
    out << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"black\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = f.y0 + (f.y1 - f.y0) * i / 4.0;
        out << "<text x=\"" << fmt(f.left - 6) << "\" y=\"" << fmt(f.py(v) + 4) << "\" text-anchor=\"end\">"
            << data::format_number(std::round(v * 1000.0) / 1000.0) << "</text>\n";
    }
    out << "<text x=\"" << fmt(f.width / 2) << "\" y=\"" << fmt(f.height - 12) << "\" text-anchor=\"middle\">"
        << escape_xml(xlabel) << "</text>\n"
        << "<text x=\"14\" y=\"" << fmt(f.height / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
        << fmt(f.height / 2) << ")\">" << escape_xml(ylabel) << "</text>\n</g>\n";
}

void write_segment_chart(const EvalResult& r, const std::filesystem::path& path) {
    Frame f;
    f.x0 = 0;
    f.x1 = static_cast<double>(r.segments.size());
    f.y0 = 0;
    double top = 0.0;
    for (const auto& s : r.segments) top = std::max(top, s.smape);
    f.y1 = top > 0.0 ? top * 1.15 : 1.0;
    auto out = open_out(path);
    svg_open(out, f, r.pollutant + " SMAPE per 6 h segment of the horizon");
    for (const auto& s : r.segments) {
        const double xa = f.px(static_cast<double>(s.index) + 0.15);
        const double xb = f.px(static_cast<double>(s.index) + 0.85);
        out << "<rect x=\"" << fmt(xa) << "\" y=\"" << fmt(f.py(s.smape)) << "\" width=\"" << fmt(xb - xa)
            << "\" height=\"" << fmt(f.py(0) - f.py(s.smape)) << "\" fill=\"#4472c4\"/>\n"
            << "<text x=\"" << fmt((xa + xb) / 2) << "\" y=\"" << fmt(f.height - f.bottom + 14)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << s.start_h + 1 << '-'
            << s.end_h << " h</text>\n";
    }
    svg_axes(out, f, "forecast step", "SMAPE");
    out << "</svg>\n";
    finish(out, path);
}

void write_band_chart(const std::vector<BandPoint>& points, const std::string& title,
                      const std::filesystem::path& path) {
    Frame f;
    f.x0 = static_cast<double>(points.front().timestamp);
    f.x1 = static_cast<double>(points.back().timestamp);
    if (f.x1 <= f.x0) f.x1 = f.x0 + 1.0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& b : points) {
        lo = std::min({lo, b.truth, b.mu - 2.0 * b.sigma});
        hi = std::max({hi, b.truth, b.mu + 2.0 * b.sigma});
    }
    f.y0 = std::min(0.0, lo);
    f.y1 = hi > f.y0 ? hi * 1.05 : f.y0 + 1.0;
    auto out = open_out(path);
    svg_open(out, f, title);
    out << "<polygon fill=\"#f4b183\" fill-opacity=\"0.5\" stroke=\"none\" points=\"";
    for (const auto& b : points) out << fmt(f.px(static_cast<double>(b.timestamp))) << ',' << fmt(f.py(b.mu + 2 * b.sigma)) << ' ';
    for (auto it = points.rbegin(); it != points.rend(); ++it)
        out << fmt(f.px(static_cast<double>(it->timestamp))) << ',' << fmt(f.py(it->mu - 2 * it->sigma)) << ' ';
    out << "\"/>\n";
    auto polyline = [&](const char* colour, auto value) {
        out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.2\" points=\"";
        for (const auto& b : points) out << fmt(f.px(static_cast<double>(b.timestamp))) << ',' << fmt(f.py(value(b))) << ' ';
        out << "\"/>\n";
    };
    polyline("#c55a11", [](const BandPoint& b) { return b.mu; });
    polyline("black", [](const BandPoint& b) { return b.truth; });
    svg_axes(out, f,
             data::format_timestamp(points.front().timestamp) + " to " + data::format_timestamp(points.back().timestamp),
             "concentration");
    out << "<g font-family=\"sans-serif\" font-size=\"11\"><text x=\"" << fmt(f.width - 200) << "\" y=\"36\">"
        << "black: truth, orange: mean, band: 2 sd</text></g>\n</svg>\n";
    finish(out, path);
}

} // namespace

void emit_report(const EvalResult& result, const std::vector<BandPoint>& bands,
                 const std::vector<std::string>& station_ids, const std::filesystem::path& dir,
                 const nlohmann::json& config) {
    if (result.n == 0) {
        throw ContractError("emit_report: empty result");
    }
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw IoError("cannot create report directory '" + dir.string() + "'");
    }
    using data::format_number;

    {
        const auto path = dir / "metrics.csv";
        auto out = open_out(path);
        out << "pollutant,station_id,smape,rmse,n\n";
        for (const auto& s : result.stations) {
            out << result.pollutant << ',' << s.station_id << ',' << format_number(s.smape) << ','
                << format_number(s.rmse) << ',' << s.n << '\n';
        }
        out << result.pollutant << ",ALL," << format_number(result.smape) << ',' << format_number(result.rmse) << ','
            << result.n << '\n';
        finish(out, path);
    }
    {
        const auto path = dir / "segments.csv";
        auto out = open_out(path);
        out << "pollutant,segment_index,start_h,end_h,smape,rmse\n";
        for (const auto& s : result.segments) {
            out << result.pollutant << ',' << s.index + 1 << ',' << s.start_h << ',' << s.end_h << ','
                << format_number(s.smape) << ',' << format_number(s.rmse) << '\n';
        }
        finish(out, path);
    }
    {
        const auto path = dir / "bands.csv";
        auto out = open_out(path);
        out << "timestamp,station_id,pollutant,truth,mu,sigma,covered\n";
        for (const auto& b : bands) {
            out << data::format_timestamp(b.timestamp) << ',' << station_ids.at(b.station) << ',' << result.pollutant
                << ',' << format_number(b.truth) << ',' << format_number(b.mu) << ',' << format_number(b.sigma) << ','
                << (b.covered ? 1 : 0) << '\n';
        }
        finish(out, path);
    }
    {
        nlohmann::json segs = nlohmann::json::array();
        for (const auto& s : result.segments) {
            segs.push_back({{"segment_index", s.index + 1},
                            {"start_h", s.start_h},
                            {"end_h", s.end_h},
                            {"smape", s.smape},
                            {"rmse", s.rmse},
                            {"n", s.n}});
        }
        const nlohmann::json j{{"pollutant", result.pollutant},
                               {"epsilon", result.epsilon},
                               {"horizon", result.horizon},
                               {"smape", result.smape},
                               {"rmse", result.rmse},
                               {"n", result.n},
                               {"segments", segs},
                               {"band_points", bands.size()},
                               {"band_coverage", band_coverage(bands)},
                               {"config", config}};
        const auto path = dir / "report.json";
        auto out = open_out(path);
        out << j.dump(2) << '\n';
        finish(out, path);
    }
    write_segment_chart(result, dir / "segments.svg");
    // One band chart per station over at most 14 days of the test span.
    constexpr data::Hour kChartHours = 14 * 24;
    std::size_t i = 0;
    while (i < bands.size()) {
        std::size_t j = i;
        while (j < bands.size() && bands[j].station == bands[i].station &&
               bands[j].timestamp < bands[i].timestamp + kChartHours) {
            ++j;
        }
        const auto& id = station_ids.at(bands[i].station);
        write_band_chart({bands.begin() + static_cast<std::ptrdiff_t>(i), bands.begin() + static_cast<std::ptrdiff_t>(j)},
                         result.pollutant + " at " + id + ": truth and forecast mean with 2 sd band",
                         dir / ("bands_" + file_safe(id) + ".svg"));
        const std::size_t station = bands[i].station;
        while (j < bands.size() && bands[j].station == station) ++j;
        i = j;
    }
}

// ---- interpolation scoring -------------------------------------------------

std::vector<double> interpolation_score(std::span<const double> interpolated, std::span<const double> truth,
                                        std::size_t hours, const grid::GridSpec& grid,
                                        const std::vector<char>& mask) {
    const std::size_t cells = grid.cell_count();
    if (interpolated.size() != hours * cells || truth.size() != hours * cells || mask.size() != cells) {
        throw ContractError("interpolation_score: shapes do not match " + std::to_string(hours) + "x" +
                            std::to_string(grid.rows) + "x" + std::to_string(grid.cols));
    }
    const auto scored = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](char m) { return m != 0; }));
    if (scored == 0) {
        throw ContractError("interpolation_score: mask selects no cells");
    }
    std::vector<double> out(hours);
    for (std::size_t h = 0; h < hours; ++h) {
        double total = 0.0;
        for (std::size_t c = 0; c < cells; ++c) {
            if (mask[c]) {
                const double d = interpolated[h * cells + c] - truth[h * cells + c];
                total += d * d;
            }
        }
        out[h] = std::sqrt(total / static_cast<double>(scored));
    }
    return out;
}

grid::GridSeries nearest_neighbor_fill(const grid::StationSet& stations, std::span<const double> readings,
                                       std::size_t hours) {
    const auto& g = stations.grid();
    const std::size_t R = stations.size();
    const std::size_t cells = g.cell_count();
    if (readings.size() != hours * R) {
        throw ContractError("nearest_neighbor_fill: readings are not hours x stations");
    }
    grid::GridSeries s{hours, g.rows, g.cols, std::vector<double>(hours * cells, std::nan(""))};
    std::vector<char> filled(hours, 0);
    for (std::size_t h = 0; h < hours; ++h) {
        for (std::size_t c = 0; c < cells; ++c) {
            const auto centre = grid::cell_center({c / g.cols, c % g.cols});
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < R; ++r) {
                const double v = readings[h * R + r];
                if (std::isnan(v)) continue;
                const auto p = stations.position(r);
                const double d = std::hypot(p.x - centre.x, p.y - centre.y);
                if (d < best) {
                    best = d;
                    s.values[h * cells + c] = v;
                }
            }
        }
        filled[h] = !std::isnan(s.values[h * cells]);
    }
    const auto first = std::find(filled.begin(), filled.end(), 1);
    if (first == filled.end()) {
        throw DataError("nearest_neighbor_fill: no hour has a reading");
    }
    std::size_t source = static_cast<std::size_t>(first - filled.begin());
    for (std::size_t h = 0; h < hours; ++h) {
        if (filled[h]) {
            source = h;
        } else {
            std::copy_n(s.values.begin() + static_cast<std::ptrdiff_t>(source * cells), cells,
                        s.values.begin() + static_cast<std::ptrdiff_t>(h * cells));
        }
    }
    return s;
}

// ---- sweep -----------------------------------------------------------------

std::vector<SweepRow> encoder_length_sweep(const std::shared_ptr<const features::PreparedSeries>& series,
                                           const std::vector<std::size_t>& lengths, models::ModelKind kind,
                                           const models::ModelConfig& model_config,
                                           const training::TrainConfig& train_config,
                                           const features::WindowOptions& window_options, std::uint64_t seed,
                                           std::size_t max_train_windows) {
    if (lengths.empty()) {
        throw ConfigError("sweep: no encoder lengths given");
    }
    std::vector<SweepRow> rows;
    for (std::size_t L : lengths) {
        auto wo = window_options;
        wo.encoder_length = L;
        const auto ws = features::build_windows(series, wo);
        if (ws.train.empty() || ws.validation.empty() || ws.test.empty()) {
            throw DataError("sweep: encoder length " + std::to_string(L) +
                            " leaves an empty training, validation or test split");
        }
        auto cfg = model_config;
        cfg.encoder_length = L;
        cfg.horizon = wo.horizon;
        std::vector<features::SampleWindow> train_set;
        if (max_train_windows == 0 || ws.train.size() <= max_train_windows) {
            train_set = ws.train;
        } else {
            for (std::size_t i = 0; i < max_train_windows; ++i) {
                train_set.push_back(ws.train[i * ws.train.size() / max_train_windows]);
            }
        }
        auto model = models::Model::create(kind, cfg, series->target_range(), seed);
        if (model.trainable()) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto& w : train_set) {
                for (double v : w.target) {
                    sum += v;
                    ++n;
                }
            }
            model.initialize_output(sum / static_cast<double>(n));
        }
        const auto report = training::train(model, train_set, ws.validation, train_config);
        std::vector<double> p, y;
        for (const auto& f : forecast_windows(model, ws.test)) {
            p.insert(p.end(), f.prediction.begin(), f.prediction.end());
            y.insert(y.end(), f.truth.begin(), f.truth.end());
        }
        rows.push_back({L, smape_metric(p, y, train_config.epsilon), rmse_metric(p, y), p.size(), report.epochs.size()});
    }
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "encoder_length,smape,rmse,n,epochs\n";
    for (const auto& r : rows) {
        out << r.encoder_length << ',' << data::format_number(r.smape) << ',' << data::format_number(r.rmse) << ','
            << r.n << ',' << r.epochs << '\n';
    }
    finish(out, path);
}

} // namespace distnet::eval
