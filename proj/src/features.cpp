#include "distnet/features.hpp"

#include "distnet/errors.hpp"
#include "distnet/interpolation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace distnet::features {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

} // namespace

// ---- normalization ---------------------------------------------------------

FeatureRange fit_range(const std::string& name, std::span<const double> values) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : values) {
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (!(hi > lo)) {
        throw ConfigError("feature '" + name + "' needs at least two distinct training values to normalize");
    }
    return {name, lo, hi};
}

void NormalizationSpec::add(FeatureRange range) {
    if (contains(range.name)) {
        throw ConfigError("normalization: duplicate feature '" + range.name + "'");
    }
    if (!(range.max > range.min)) {
        throw ConfigError("normalization: feature '" + range.name + "' has max ≤ min");
    }
    ranges_.push_back(std::move(range));
}

const FeatureRange& NormalizationSpec::get(const std::string& name) const {
    for (const auto& r : ranges_) {
        if (r.name == name) {
            return r;
        }
    }
    throw LookupError("normalization: unknown feature '" + name + "'");
}

bool NormalizationSpec::contains(const std::string& name) const {
    return std::any_of(ranges_.begin(), ranges_.end(), [&](const auto& r) { return r.name == name; });
}

nlohmann::json NormalizationSpec::to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : ranges_) {
        out.push_back({{"name", r.name}, {"min", r.min}, {"max", r.max}});
    }
    return out;
}

NormalizationSpec NormalizationSpec::from_json(const nlohmann::json& j) {
    NormalizationSpec spec;
    try {
        for (const auto& r : j) {
            spec.add({r.at("name").get<std::string>(), r.at("min").get<double>(), r.at("max").get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw VersionError(std::string("normalization spec: ") + e.what());
    }
    return spec;
}

MinMaxResult minmax_fit_transform(const std::string& name, std::span<const double> values, const FeatureRange* frozen) {
    MinMaxResult out{{}, frozen ? *frozen : fit_range(name, values)};
    out.values.reserve(values.size());
    for (double v : values) {
        out.values.push_back(out.range.transform(v));
    }
    return out;
}

// ---- statistical and time features -----------------------------------------

std::size_t StatsConfig::history() const {
    std::size_t h = 1;
    for (auto v : lags) {
        h = std::max(h, v + 1);
    }
    for (auto v : mean_windows) {
        h = std::max(h, v);
    }
    for (auto v : std_windows) {
        h = std::max(h, v);
    }
    return h;
}

std::vector<double> statistical_features(std::span<const double> series, std::size_t t, const StatsConfig& cfg) {
    if (series.empty() || t >= series.size()) {
        throw BoundsError("statistical_features: hour " + std::to_string(t) + " outside the series");
    }
    // Value k hours before t, padded with the first value.
    auto back = [&](std::size_t k) { return k > t ? series[0] : series[t - k]; };
    std::vector<double> out;
    out.reserve(cfg.gamma());
    for (auto lag : cfg.lags) {
        out.push_back(series[t] - back(lag));
    }
    for (auto w : cfg.mean_windows) {
        double sum = 0.0;
        for (std::size_t k = 0; k < w; ++k) {
            sum += back(k);
        }
        out.push_back(sum / static_cast<double>(w));
    }
    for (auto w : cfg.std_windows) {
        double sum = 0.0;
        for (std::size_t k = 0; k < w; ++k) {
            sum += back(k);
        }
        const double mean = sum / static_cast<double>(w);
        double sq = 0.0;
        for (std::size_t k = 0; k < w; ++k) {
            sq += (back(k) - mean) * (back(k) - mean);
        }
        out.push_back(std::sqrt(sq / static_cast<double>(w)));
    }
    return out;
}

std::vector<TimeIds> time_features(Hour start, std::size_t tau) {
    std::vector<TimeIds> out(tau);
    for (std::size_t k = 0; k < tau; ++k) {
        const Hour h = start + static_cast<Hour>(k);
        out[k] = {data::hour_of_day(h), data::day_of_week(h)};
    }
    return out;
}

// ---- prepared series -------------------------------------------------------

std::size_t fill_short_gaps(std::span<double> series, std::size_t max_gap) {
    std::size_t filled = 0;
    std::size_t i = 0;
    while (i < series.size()) {
        if (!std::isnan(series[i])) {
            ++i;
            continue;
        }
        const std::size_t begin = i;
        while (i < series.size() && std::isnan(series[i])) {
            ++i;
        }
        const std::size_t len = i - begin;
        if (begin == 0 || i == series.size() || len > max_gap) {
            continue;
        }
        const double a = series[begin - 1];
        const double b = series[i];
        for (std::size_t k = 0; k < len; ++k) {
            const double w = static_cast<double>(k + 1) / static_cast<double>(len + 1);
            series[begin + k] = (1.0 - w) * a + w * b;
        }
        filled += len;
    }
    return filled;
}

std::shared_ptr<const PreparedSeries> PreparedSeries::prepare(const data::Dataset& dataset, Pollutant pollutant,
                                                              const PrepareOptions& options,
                                                              const NormalizationSpec* frozen) {
    auto out = std::make_shared<PreparedSeries>();
    PreparedSeries& ps = *out;
    ps.pollutant_ = pollutant;
    ps.stations_ = dataset.stations;
    ps.start_ = dataset.start;
    ps.hours_ = dataset.hours;
    ps.options_ = options;
    const std::size_t H = dataset.hours;
    const std::size_t R = dataset.stations.size();
    const auto& g = dataset.stations.grid();
    const std::size_t cells = g.cell_count();
    const std::string pname = data::pollutant_name(pollutant);

    // Station readings with short gaps filled.
    ps.readings_ = dataset.pollution[static_cast<std::size_t>(pollutant)];
    std::vector<double> column(H);
    for (std::size_t s = 0; s < R; ++s) {
        for (std::size_t h = 0; h < H; ++h) {
            column[h] = ps.readings_[h * R + s];
        }
        fill_short_gaps(column, options.max_gap_fill);
        for (std::size_t h = 0; h < H; ++h) {
            ps.readings_[h * R + s] = column[h];
        }
    }

    auto filled = grid::fill_series(dataset.stations, ps.readings_, H);
    ps.grid_values_ = std::move(filled.series.values);
    for (auto& w : filled.warnings) {
        ps.warnings_.push_back(pname + ": " + w);
    }

    // Training hours for normalization.
    if (options.train_cutoff < dataset.start) {
        throw DataError("train cutoff " + data::format_timestamp(options.train_cutoff) + " precedes the data");
    }
    const std::size_t train_hours =
        std::min<std::size_t>(H, static_cast<std::size_t>(options.train_cutoff - dataset.start + 1));
    const std::array<std::size_t, 4> scalar_fields{data::temperature, data::pressure, data::humidity,
                                                   data::wind_speed};
    if (frozen) {
        ps.normalization_ = *frozen;
        ps.normalization_.get(pname);
        for (auto f : scalar_fields) {
            ps.normalization_.get(data::kWeatherFieldNames[f]);
        }
    } else {
        auto fit = [&](const std::string& name, std::span<const double> values) {
            try {
                ps.normalization_.add(fit_range(name, values));
            } catch (const ConfigError&) {
                if (options.strict_normalization) {
                    throw;
                }
                double v = 0.0;
                for (double x : values) {
                    if (std::isfinite(x)) {
                        v = x;
                        break;
                    }
                }
                ps.normalization_.add({name, v, v + 1.0});
                ps.warnings_.push_back("feature '" + name + "' is constant over the training range");
            }
        };
        fit(pname, std::span<const double>(ps.readings_.data(), train_hours * R));
        std::vector<double> values(train_hours * cells);
        for (auto f : scalar_fields) {
            for (std::size_t h = 0; h < train_hours; ++h) {
                for (std::size_t c = 0; c < cells; ++c) {
                    values[h * cells + c] = dataset.weather[(h * cells + c) * data::kWeatherFields + f];
                }
            }
            fit(data::kWeatherFieldNames[f], values);
        }
    }

    // Normalized frames.
    const auto& prange = ps.normalization_.get(pname);
    std::array<FeatureRange, 4> wranges;
    for (std::size_t k = 0; k < 4; ++k) {
        wranges[k] = ps.normalization_.get(data::kWeatherFieldNames[scalar_fields[k]]);
    }
    ps.frames_.assign(H * cells * kChannels, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t c = 0; c < cells; ++c) {
            double* dst = ps.frames_.data() + (h * cells + c) * kChannels;
            const double* w = dataset.weather.data() + (h * cells + c) * data::kWeatherFields;
            dst[0] = prange.transform(ps.grid_values_[h * cells + c]);
            for (std::size_t k = 0; k < 4; ++k) {
                dst[1 + k] = wranges[k].transform(w[scalar_fields[k]]);
            }
            const double rad = w[data::wind_direction] * std::numbers::pi / 180.0;
            dst[5] = (std::sin(rad) + 1.0) / 2.0;
            dst[6] = (std::cos(rad) + 1.0) / 2.0;
            dst[7 + static_cast<std::size_t>(w[data::condition_id])] = 1.0;
        }
    }

    // Station series and statistics.
    ps.series_.resize(R * H);
    for (std::size_t s = 0; s < R; ++s) {
        const auto cell = dataset.stations[s].cell;
        for (std::size_t h = 0; h < H; ++h) {
            const double r = ps.readings_[h * R + s];
            ps.series_[s * H + h] =
                std::isnan(r) ? ps.frames_[(h * cells + cell.row * g.cols + cell.col) * kChannels] : prange.transform(r);
        }
    }
    const std::size_t gamma = options.stats.gamma();
    ps.stats_.resize(H * R * gamma);
    for (std::size_t s = 0; s < R; ++s) {
        const std::span<const double> series(ps.series_.data() + s * H, H);
        for (std::size_t h = 0; h < H; ++h) {
            const auto f = statistical_features(series, h, options.stats);
            std::copy(f.begin(), f.end(), ps.stats_.begin() + static_cast<std::ptrdiff_t>((h * R + s) * gamma));
        }
    }

    ps.members_.resize(R);
    for (std::size_t s = 0; s < R; ++s) {
        ps.members_[s] = grid::sector_members(dataset.stations, s, options.neighbor_radius_km, options.sectors);
    }
    return out;
}

// ---- windows ---------------------------------------------------------------

Tensor SampleWindow::encoder_frames() const {
    const auto& g = series->grid();
    const std::size_t frame = g.cell_count() * kChannels;
    std::vector<double> v(encoder_length * frame);
    for (std::size_t t = 0; t < encoder_length; ++t) {
        std::copy_n(series->frame(start + t), frame, v.begin() + static_cast<std::ptrdiff_t>(t * frame));
    }
    return Tensor::from({encoder_length, g.rows, g.cols, kChannels}, std::move(v));
}

Tensor SampleWindow::stats() const {
    const std::size_t gamma = series->stats_config().gamma();
    std::vector<double> v;
    v.reserve(encoder_length * gamma);
    for (std::size_t t = 0; t < encoder_length; ++t) {
        const auto s = series->stats(start + t, station);
        v.insert(v.end(), s.begin(), s.end());
    }
    return Tensor::from({encoder_length, gamma}, std::move(v));
}

Tensor SampleWindow::spot_features() const {
    const auto c = cell();
    std::vector<double> v;
    v.reserve(encoder_length * kChannels);
    for (std::size_t t = 0; t < encoder_length; ++t) {
        for (std::size_t k = 0; k < kChannels; ++k) {
            v.push_back(series->value(start + t, c.row, c.col, k));
        }
    }
    return Tensor::from({encoder_length, kChannels}, std::move(v));
}

double SampleWindow::last_observed() const {
    for (std::size_t t = encoder_length; t-- > 0;) {
        const double r = series->station_reading(start + t, station);
        if (!std::isnan(r)) {
            return r;
        }
    }
    const auto c = cell();
    return series->pollutant_grid()[(target_begin() - 1) * series->grid().cell_count() + c.row * series->grid().cols +
                                    c.col];
}

WindowSet build_windows(const std::shared_ptr<const PreparedSeries>& series, const WindowOptions& options) {
    if (!series) {
        throw ContractError("build_windows: no series");
    }
    const std::size_t T = options.encoder_length;
    const std::size_t tau = options.horizon;
    if (T == 0 || tau == 0 || options.stride == 0) {
        throw ConfigError("window lengths and stride must be positive");
    }
    if (!(options.validation_fraction >= 0.0 && options.validation_fraction < 1.0)) {
        throw ConfigError("validation fraction must lie in [0, 1)");
    }
    const std::size_t L = series->hours();
    if (L < T + tau) {
        throw DataError("series of " + std::to_string(L) + " hours is shorter than T + tau = " + std::to_string(T + tau));
    }
    const Hour start = series->start();
    const Hour cutoff = options.train_cutoff;
    const Hour train_span = std::max<Hour>(0, cutoff - start + 1);
    const Hour val_cutoff = cutoff - static_cast<Hour>(std::floor(options.validation_fraction * static_cast<double>(train_span)));

    WindowSet out;
    const std::size_t R = series->stations().size();
    for (std::size_t s = 0; s < R; ++s) {
        for (std::size_t w = 0; w + T + tau <= L; w += options.stride) {
            ++out.candidates;
            SampleWindow win;
            win.series = series;
            win.station = s;
            win.start = w;
            win.encoder_length = T;
            win.horizon = tau;
            win.target.resize(tau);
            bool gap = false;
            for (std::size_t k = 0; k < tau; ++k) {
                win.target[k] = series->station_reading(w + T + k, s);
                gap = gap || std::isnan(win.target[k]);
            }
            if (gap) {
                ++out.dropped_gaps;
                continue;
            }
            const Hour first = win.first_target_time();
            const Hour last = first + static_cast<Hour>(tau) - 1;
            // Inputs end strictly before the first target.
            if (start + static_cast<Hour>(w + T) - 1 >= first) {
                throw ContractError("build_windows: input overlaps target");
            }
            win.time_ids = time_features(first, tau);
            if (last <= val_cutoff) {
                out.train.push_back(std::move(win));
            } else if (first > val_cutoff && last <= cutoff) {
                out.validation.push_back(std::move(win));
            } else if (first > cutoff) {
                out.test.push_back(std::move(win));
            } else {
                ++out.dropped_straddle;
            }
        }
    }
    return out;
}

} // namespace distnet::features
