#include "distnet/synth.hpp"

#include "distnet/errors.hpp"
#include "distnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace distnet::synth {

namespace {

constexpr double kKmPerDegree = 111.32;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Stationary AR(1) process with unit-hour steps.
struct Ar1 {
    double phi;
    double innovation;
    double state = 0.0;

    Ar1(double stddev, double correlation_hours)
        : phi(correlation_hours > 0 ? std::exp(-1.0 / correlation_hours) : 0.0),
          innovation(stddev * std::sqrt(1.0 - phi * phi)) {}

    double next(nn::Rng& rng) {
        state = phi * state + innovation * rng.normal();
        return state;
    }
};

double wrap_degrees(double d) {
    d = std::fmod(d, 360.0);
    return d < 0 ? d + 360.0 : d;
}

} // namespace

void SynthConfig::validate() const {
    grid.validate();
    if (hours == 0) {
        throw ConfigError("synth: hours must be positive");
    }
    if (stations == 0) {
        throw ConfigError("synth: at least one station is required");
    }
    for (double r : {diffusion, transport_scale, decay, washout, background, initial, noise_std, wind.mean_speed, wind.random_speed}) {
        if (!(r >= 0.0) || !std::isfinite(r)) {
            throw ConfigError("synth: rates, levels and noise must be finite and non-negative");
        }
    }
    if (!(missing_rate >= 0.0 && missing_rate < 1.0)) {
        throw ConfigError("synth: missing rate must lie in [0, 1)");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("synth: train fraction must lie in (0, 1)");
    }
    if (dt < 0.0) {
        throw ConfigError("synth: dt must be non-negative");
    }
    for (const auto& s : sources) {
        if (s.row >= grid.rows || s.col >= grid.cols) {
            throw ConfigError("synth: source outside the grid");
        }
        if (!(s.rate >= 0.0) || !(s.diurnal_amplitude >= 0.0 && s.diurnal_amplitude <= 1.0)) {
            throw ConfigError("synth: source rates must be non-negative and diurnal amplitude in [0, 1]");
        }
    }
}

double stable_dt(double u, double v, double diffusion) {
    const double rate = std::fabs(u) + std::fabs(v) + 4.0 * diffusion;
    double dt = rate > 0 ? 0.9 / rate : 1.0;
    if (diffusion > 0) {
        dt = std::min(dt, 0.25 / diffusion);
    }
    return std::min(dt, 1.0);
}

void advect_diffuse_step(std::vector<double>& c, std::size_t rows, std::size_t cols, double u, double v,
                         double diffusion, double dt) {
    if (c.size() != rows * cols) {
        throw ContractError("advect_diffuse_step: field size mismatch");
    }
    if (diffusion * dt > 0.25 + 1e-12) {
        throw ConfigError("synth: stability bound diffusion·dt/dx² ≤ 0.25 violated (" + std::to_string(diffusion * dt) +
                          ")");
    }
    if (dt * (std::fabs(u) + std::fabs(v) + 4.0 * diffusion) > 1.0 + 1e-12) {
        throw ConfigError("synth: stability bound dt·(|u| + |v| + 4·diffusion) ≤ 1 violated");
    }
    std::vector<double> delta(c.size(), 0.0);
    auto at = [&](std::size_t r, std::size_t k) { return c[r * cols + k]; };
    // East faces between (r, k) and (r, k+1).
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k + 1 < cols; ++k) {
            const double adv = u >= 0 ? u * at(r, k) : u * at(r, k + 1);
            const double flux = dt * (adv - diffusion * (at(r, k + 1) - at(r, k)));
            delta[r * cols + k] -= flux;
            delta[r * cols + k + 1] += flux;
        }
    }
    // North faces between (r, k) and (r+1, k).
    for (std::size_t r = 0; r + 1 < rows; ++r) {
        for (std::size_t k = 0; k < cols; ++k) {
            const double adv = v >= 0 ? v * at(r, k) : v * at(r + 1, k);
            const double flux = dt * (adv - diffusion * (at(r + 1, k) - at(r, k)));
            delta[r * cols + k] -= flux;
            delta[(r + 1) * cols + k] += flux;
        }
    }
    for (std::size_t i = 0; i < c.size(); ++i) {
        c[i] += delta[i];
    }
}

SynthResult generate(const SynthConfig& cfg) {
    cfg.validate();
    const auto& g = cfg.grid;
    const std::size_t M = g.rows, N = g.cols, cells = g.cell_count(), H = cfg.hours;
    nn::Rng rng(cfg.seed);

    SynthResult out;
    out.config = cfg;
    auto& ds = out.dataset;
    ds.start = cfg.start;
    ds.hours = H;

    // Station placement, away from the outer edge by a small margin.
    std::vector<grid::StationLocation> locs;
    for (std::size_t s = 0; s < cfg.stations; ++s) {
        const double y = rng.uniform(0.02, static_cast<double>(M) - 0.02);
        const double x = rng.uniform(0.02, static_cast<double>(N) - 0.02);
        char id[16];
        std::snprintf(id, sizeof id, "st%03zu", s + 1);
        locs.push_back({id, g.origin_lat + y * g.cell_size, g.origin_lon + x * g.cell_size});
    }
    ds.stations = grid::assign_cells(locs, g);

    // Cell size in km for converting wind speed to cells per hour.
    const double mid_lat = (g.origin_lat + 0.5 * static_cast<double>(M) * g.cell_size) * std::numbers::pi / 180.0;
    const double cell_km_ns = g.cell_size * kKmPerDegree;
    const double cell_km_ew = cell_km_ns * std::cos(mid_lat);

    Ar1 speed_ar(cfg.wind.random_speed, cfg.wind.correlation_hours);
    Ar1 dir_ar(cfg.wind.random_direction, cfg.wind.correlation_hours);
    Ar1 humid_ar(18.0, 36.0);
    Ar1 press_ar(6.0, 72.0);
    Ar1 temp_ar(3.0, 48.0);

    ds.weather.assign(H * cells * data::kWeatherFields, 0.0);
    for (auto& t : out.truth) {
        t.assign(H * cells, 0.0);
    }
    std::array<std::vector<double>, data::kPollutantCount> field;
    for (auto& f : field) {
        f.assign(cells, cfg.initial);
    }
    std::vector<char> raining(cells, 0);

    for (std::size_t h = 0; h < H; ++h) {
        const data::Hour abs_hour = cfg.start + static_cast<data::Hour>(h);
        const double hod = static_cast<double>(data::hour_of_day(abs_hour));
        const double day = static_cast<double>(abs_hour) / 24.0;
        const double phase = kTwoPi * static_cast<double>(h) / cfg.wind.period_hours;

        // Weather for this hour.
        const double speed =
            std::max(0.0, cfg.wind.mean_speed + cfg.wind.speed_amplitude * std::sin(phase) + speed_ar.next(rng));
        const double from = cfg.wind.mean_direction + cfg.wind.direction_amplitude * std::sin(phase + 1.0) + dir_ar.next(rng);
        const double toward = (from + 180.0) * std::numbers::pi / 180.0;
        const double transport = speed * cfg.transport_scale * 3.6;
        const double u = transport * std::sin(toward) / cell_km_ew; // cells per hour, east
        const double v = transport * std::cos(toward) / cell_km_ns; // cells per hour, north
        const double humidity = 55.0 + humid_ar.next(rng);
        const double pressure = 1013.0 + press_ar.next(rng);
        const double temperature =
            12.0 + 12.0 * std::sin(kTwoPi * (day - 110.0) / 365.0) + 5.0 * std::sin(kTwoPi * (hod - 9.0) / 24.0) + temp_ar.next(rng);
        for (std::size_t r = 0; r < M; ++r) {
            for (std::size_t k = 0; k < N; ++k) {
                const std::size_t cell = r * N + k;
                double* w = ds.weather.data() + (h * cells + cell) * data::kWeatherFields;
                w[data::temperature] = temperature - 0.3 * static_cast<double>(r) + 0.3 * rng.normal();
                w[data::pressure] = pressure - 0.2 * static_cast<double>(r) + 0.2 * rng.normal();
                w[data::humidity] = std::clamp(humidity + 0.5 * static_cast<double>(k) + 2.0 * rng.normal(), 5.0, 100.0);
                const double ws = std::max(0.0, speed + 0.2 * rng.normal());
                w[data::wind_speed] = ws;
                w[data::wind_direction] = wrap_degrees(from + 5.0 * rng.normal());
                const double hum = w[data::humidity];
                int condition = 0; // clear
                if (hum > 80.0) {
                    condition = 2; // rain
                } else if (hum > 70.0 && ws < 1.0) {
                    condition = 3; // fog
                } else if (hum > 60.0) {
                    condition = 1; // cloudy
                }
                w[data::condition_id] = condition;
                raining[cell] = condition == 2;
            }
        }

        // Pollutant dynamics.
        if (cfg.mode == FieldMode::dynamic) {
            std::size_t steps = 1;
            if (cfg.dt > 0.0) {
                const double n = 1.0 / cfg.dt;
                steps = static_cast<std::size_t>(std::llround(n));
                if (steps == 0 || std::fabs(n - static_cast<double>(steps)) > 1e-9) {
                    throw ConfigError("synth: dt must divide one hour");
                }
            } else {
                steps = static_cast<std::size_t>(std::ceil(1.0 / stable_dt(u, v, cfg.diffusion) - 1e-12));
            }
            const double dt = 1.0 / static_cast<double>(steps);
            for (std::size_t step = 0; step < steps; ++step) {
                const double t_hours = hod + dt * static_cast<double>(step);
                for (std::size_t p = 0; p < data::kPollutantCount; ++p) {
                    auto& c = field[p];
                    advect_diffuse_step(c, M, N, u, v, cfg.diffusion, dt);
                    const auto& sp = kSpecies[p];
                    for (std::size_t cell = 0; cell < cells; ++cell) {
                        const double k = sp.decay_scale * cfg.decay + (raining[cell] ? cfg.washout : 0.0);
                        c[cell] += dt * (cfg.background * sp.background_scale - k * c[cell]);
                    }
                    for (const auto& s : cfg.sources) {
                        const double diurnal =
                            1.0 + s.diurnal_amplitude * std::cos(kTwoPi * (t_hours - static_cast<double>(s.peak_hour)) / 24.0);
                        c[s.row * N + s.col] += dt * sp.source_scale * s.rate * diurnal;
                    }
                    for (auto& x : c) {
                        x = std::max(x, 0.0);
                    }
                }
            }
            out.substeps += steps;
        }
        for (std::size_t p = 0; p < data::kPollutantCount; ++p) {
            for (std::size_t r = 0; r < M; ++r) {
                for (std::size_t k = 0; k < N; ++k) {
                    double value = field[p][r * N + k];
                    if (cfg.mode == FieldMode::linear) {
                        value = cfg.linear[0] + cfg.linear[1] * (static_cast<double>(k) + 0.5) +
                                cfg.linear[2] * (static_cast<double>(r) + 0.5);
                    }
                    out.truth[p][h * cells + r * N + k] = value;
                }
            }
        }
    }

    // Station observations.
    const std::size_t R = ds.stations.size();
    for (std::size_t p = 0; p < data::kPollutantCount; ++p) {
        auto& obs = ds.pollution[p];
        obs.assign(H * R, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t s = 0; s < R; ++s) {
                const auto cell = ds.stations[s].cell;
                double value = out.truth[p][h * cells + cell.row * N + cell.col];
                if (cfg.mode == FieldMode::linear) {
                    const auto pos = ds.stations.position(s);
                    value = cfg.linear[0] + cfg.linear[1] * pos.x + cfg.linear[2] * pos.y;
                }
                const double noise = std::clamp(cfg.noise_std * rng.normal(), -3.0 * cfg.noise_std, 3.0 * cfg.noise_std);
                const bool missing = cfg.missing_rate > 0.0 && rng.uniform() < cfg.missing_rate;
                if (!missing) {
                    obs[h * R + s] = std::max(0.0, value + noise);
                }
            }
        }
    }
    out.train_cutoff =
        cfg.start + static_cast<data::Hour>(std::floor(cfg.train_fraction * static_cast<double>(H))) - 1;
    return out;
}

std::filesystem::path write_dataset(const SynthResult& result, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    }
    data::Manifest m;
    m.stations_csv = dir / "stations.csv";
    m.pollution_csv = dir / "pollution.csv";
    m.weather_csv = dir / "weather.csv";
    m.truth_csv = dir / "truth.csv";
    m.grid = result.config.grid;
    m.train_cutoff = result.train_cutoff;
    m.pollutants = {data::Pollutant::pm25, data::Pollutant::pm10, data::Pollutant::o3};
    data::write_station_csv(m.stations_csv, result.dataset.stations);
    data::write_pollution_csv(m.pollution_csv, result.dataset);
    data::write_weather_csv(m.weather_csv, result.dataset);
    data::write_grid_csv(*m.truth_csv, result.dataset.start, result.dataset.hours, m.grid,
                         result.truth[static_cast<std::size_t>(data::Pollutant::pm25)]);
    const auto path = dir / "manifest.json";
    data::save_manifest(m, path);
    return path;
}

std::vector<std::string> preset_names() { return {"tiny", "beijing-like", "constant", "linear"}; }

SynthConfig preset(const std::string& name, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.start = data::parse_timestamp("2017-01-01T00:00:00");
    nn::Rng rng(seed ^ 0x5eed5eed5eedULL);
    auto add_sources = [&](std::size_t count, double lo, double hi) {
        for (std::size_t i = 0; i < count; ++i) {
            cfg.sources.push_back({static_cast<std::size_t>(rng.below(cfg.grid.rows)),
                                   static_cast<std::size_t>(rng.below(cfg.grid.cols)), rng.uniform(lo, hi),
                                   rng.uniform(0.3, 0.8), static_cast<int>(rng.below(24))});
        }
    };
    if (name == "tiny") {
        cfg.grid = {6, 6, 39.6, 115.9, 0.1};
        cfg.hours = 40 * 24;
        cfg.stations = 5;
        cfg.noise_std = 0.5;
        cfg.transport_scale = 0.25;
        cfg.diffusion = 0.25;
        cfg.decay = 0.03;
        add_sources(2, 20.0, 40.0);
    } else if (name == "beijing-like") {
        cfg.grid = {11, 12, 39.5, 115.9, 0.1};
        cfg.hours = 500 * 24;
        cfg.stations = 35;
        cfg.noise_std = 2.0;
        cfg.missing_rate = 0.01;
        cfg.transport_scale = 0.25;
        cfg.diffusion = 0.25;
        cfg.decay = 0.03;
        add_sources(6, 20.0, 60.0);
    } else if (name == "constant") {
        cfg.grid = {6, 6, 39.6, 115.9, 0.1};
        cfg.hours = 20 * 24;
        cfg.stations = 5;
        cfg.mode = FieldMode::constant;
        cfg.noise_std = 0.0;
        cfg.initial = 35.0;
    } else if (name == "linear") {
        cfg.grid = {11, 12, 39.5, 115.9, 0.1};
        cfg.hours = 48;
        cfg.stations = 35;
        cfg.mode = FieldMode::linear;
        cfg.noise_std = 0.0;
    } else {
        throw LookupError("unknown synth preset '" + name + "' (expected tiny, beijing-like, constant or linear)");
    }
    return cfg;
}

} // namespace distnet::synth
