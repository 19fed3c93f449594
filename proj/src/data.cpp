#include "distnet/data.hpp"

#include "distnet/errors.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace distnet::data {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t begin = 0;
    while (true) {
        const auto end = line.find(',', begin);
        out.push_back(line.substr(begin, end == std::string_view::npos ? std::string_view::npos : end - begin));
        if (end == std::string_view::npos) {
            break;
        }
        begin = end + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::string where(const fs::path& path, std::size_t line) { return path.string() + ":" + std::to_string(line); }

double parse_number(std::string_view text, const fs::path& path, std::size_t line) {
    text = trim(text);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
        throw DataError(where(path, line) + ": not a number: '" + std::string(text) + "'");
    }
    return value;
}

std::size_t parse_index(std::string_view text, const fs::path& path, std::size_t line) {
    text = trim(text);
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw DataError(where(path, line) + ": not an index: '" + std::string(text) + "'");
    }
    return value;
}

// Opens a CSV and checks its header row; returns the stream positioned at the
// first data row.
std::ifstream open_csv(const fs::path& path, std::string_view header) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    std::string line;
    if (!std::getline(in, line) || trim(line) != header) {
        throw DataError(where(path, 1) + ": expected header '" + std::string(header) + "'");
    }
    return in;
}

std::ofstream create_file(const fs::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write '" + path.string() + "'");
    }
    return out;
}

void finish_file(std::ofstream& out, const fs::path& path) {
    out.flush();
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

std::string optional_number(double v) { return std::isnan(v) ? std::string() : format_number(v); }

} // namespace

std::string pollutant_name(Pollutant p) {
    switch (p) {
    case Pollutant::pm25:
        return "pm25";
    case Pollutant::pm10:
        return "pm10";
    case Pollutant::o3:
        return "o3";
    }
    return "unknown";
}

Pollutant parse_pollutant(std::string_view name) {
    if (name == "pm25") {
        return Pollutant::pm25;
    }
    if (name == "pm10") {
        return Pollutant::pm10;
    }
    if (name == "o3") {
        return Pollutant::o3;
    }
    throw ConfigError("unknown pollutant '" + std::string(name) + "' (expected pm25, pm10 or o3)");
}

Hour parse_timestamp(std::string_view text) {
    text = trim(text);
    if (!text.empty() && text.back() == 'Z') {
        text.remove_suffix(1);
    }
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    char sep = 0;
    const std::string copy(text);
    int consumed = 0;
    const int fields = std::sscanf(copy.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &consumed);
    bool ok = fields >= 6 && (sep == 'T' || sep == ' ');
    if (ok && static_cast<std::size_t>(consumed) < copy.size()) {
        int extra = 0;
        ok = std::sscanf(copy.c_str() + consumed, ":%2d%n", &s, &extra) == 1 &&
             static_cast<std::size_t>(consumed + extra) == copy.size();
    }
    const std::chrono::year_month_day ymd{std::chrono::year(y), std::chrono::month(static_cast<unsigned>(mo)),
                                          std::chrono::day(static_cast<unsigned>(d))};
    if (!ok || !ymd.ok() || h < 0 || h > 23) {
        throw DataError("invalid timestamp '" + copy + "'");
    }
    if (mi != 0 || s != 0) {
        throw DataError("timestamp '" + copy + "' is not aligned to the hour");
    }
    const auto days = std::chrono::sys_days(ymd).time_since_epoch().count();
    return static_cast<Hour>(days) * 24 + h;
}

std::string format_timestamp(Hour hour) {
    const auto days = static_cast<int>(hour >= 0 ? hour / 24 : (hour - 23) / 24);
    const int h = static_cast<int>(hour - static_cast<Hour>(days) * 24);
    const std::chrono::year_month_day ymd{std::chrono::sys_days(std::chrono::days(days))};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:00:00", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), h);
    return buf;
}

int hour_of_day(Hour hour) { return static_cast<int>(((hour % 24) + 24) % 24); }

int day_of_week(Hour hour) {
    const Hour days = hour >= 0 ? hour / 24 : (hour - 23) / 24;
    // 1970-01-01 was a Thursday (index 3 with Monday = 0).
    return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

std::string format_number(double value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    if (ec != std::errc()) {
        throw IoError("cannot format number");
    }
    return std::string(buf, ptr);
}

// ---- manifest --------------------------------------------------------------

nlohmann::json grid_to_json(const grid::GridSpec& grid) {
    return {{"rows", grid.rows},
            {"cols", grid.cols},
            {"origin_lat", grid.origin_lat},
            {"origin_lon", grid.origin_lon},
            {"cell_size", grid.cell_size}};
}

grid::GridSpec grid_from_json(const nlohmann::json& j) {
    try {
        grid::GridSpec g;
        g.rows = j.at("rows").get<std::size_t>();
        g.cols = j.at("cols").get<std::size_t>();
        g.origin_lat = j.at("origin_lat").get<double>();
        g.origin_lon = j.at("origin_lon").get<double>();
        g.cell_size = j.value("cell_size", 0.1);
        g.validate();
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("grid: ") + e.what());
    }
}

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest '" + path.string() + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest '" + path.string() + "': " + e.what());
    }
    const fs::path base = path.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    Manifest m;
    try {
        m.stations_csv = resolve(j.at("stations").get<std::string>());
        m.pollution_csv = resolve(j.at("pollution").get<std::string>());
        m.weather_csv = resolve(j.at("weather").get<std::string>());
        if (j.contains("truth")) {
            m.truth_csv = resolve(j.at("truth").get<std::string>());
        }
        m.grid = grid_from_json(j.at("grid"));
        m.train_cutoff = parse_timestamp(j.at("train_cutoff").get<std::string>());
        if (j.contains("pollutants")) {
            m.pollutants.clear();
            for (const auto& p : j.at("pollutants")) {
                m.pollutants.push_back(parse_pollutant(p.get<std::string>()));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest '" + path.string() + "': " + e.what());
    } catch (const DataError& e) {
        throw ConfigError("manifest '" + path.string() + "': " + e.what());
    }
    return m;
}

void save_manifest(const Manifest& m, const fs::path& path) {
    const fs::path base = path.parent_path();
    auto rel = [&](const fs::path& p) {
        const auto r = p.lexically_relative(base.empty() ? fs::path(".") : base);
        return (r.empty() || *r.begin() == "..") ? p.string() : r.string();
    };
    nlohmann::json j;
    j["format"] = "distnet-manifest";
    j["version"] = 1;
    j["stations"] = rel(m.stations_csv);
    j["pollution"] = rel(m.pollution_csv);
    j["weather"] = rel(m.weather_csv);
    if (m.truth_csv) {
        j["truth"] = rel(*m.truth_csv);
    }
    j["grid"] = grid_to_json(m.grid);
    j["train_cutoff"] = format_timestamp(m.train_cutoff);
    j["pollutants"] = nlohmann::json::array();
    for (auto p : m.pollutants) {
        j["pollutants"].push_back(pollutant_name(p));
    }
    auto out = create_file(path);
    out << j.dump(2) << "\n";
    finish_file(out, path);
}

// ---- CSV files -------------------------------------------------------------

std::vector<grid::StationLocation> read_station_csv(const fs::path& path) {
    auto in = open_csv(path, "station_id,latitude,longitude");
    std::vector<grid::StationLocation> out;
    std::string line;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) {
            continue;
        }
        const auto f = split_commas(line);
        if (f.size() != 3) {
            throw DataError(where(path, n) + ": expected 3 fields");
        }
        out.push_back({std::string(trim(f[0])), parse_number(f[1], path, n), parse_number(f[2], path, n)});
    }
    return out;
}

void write_station_csv(const fs::path& path, const grid::StationSet& stations) {
    auto out = create_file(path);
    out << "station_id,latitude,longitude\n";
    for (const auto& s : stations.stations()) {
        out << s.id << ',' << format_number(s.latitude) << ',' << format_number(s.longitude) << '\n';
    }
    finish_file(out, path);
}

Dataset load_dataset(const Manifest& manifest) {
    Dataset ds;
    ds.stations = grid::assign_cells(read_station_csv(manifest.stations_csv), manifest.grid);
    const auto& g = manifest.grid;
    const std::size_t cells = g.cell_count();

    // Weather defines the time axis.
    struct WeatherRow {
        Hour hour;
        std::size_t cell;
        std::array<double, kWeatherFields> values;
    };
    std::vector<WeatherRow> rows;
    {
        auto in = open_csv(manifest.weather_csv,
                           "timestamp,row,col,temperature,pressure,humidity,wind_speed,wind_direction,condition_id");
        std::string line;
        std::size_t n = 1;
        while (std::getline(in, line)) {
            ++n;
            if (trim(line).empty()) {
                continue;
            }
            const auto f = split_commas(line);
            if (f.size() != 3 + kWeatherFields) {
                throw DataError(where(manifest.weather_csv, n) + ": expected 9 fields");
            }
            WeatherRow row{};
            try {
                row.hour = parse_timestamp(f[0]);
            } catch (const DataError& e) {
                throw DataError(where(manifest.weather_csv, n) + ": " + e.what());
            }
            const auto r = parse_index(f[1], manifest.weather_csv, n);
            const auto c = parse_index(f[2], manifest.weather_csv, n);
            if (r >= g.rows || c >= g.cols) {
                throw DataError(where(manifest.weather_csv, n) + ": cell outside the grid");
            }
            row.cell = r * g.cols + c;
            for (std::size_t k = 0; k < kWeatherFields; ++k) {
                row.values[k] = parse_number(f[3 + k], manifest.weather_csv, n);
            }
            const double cond = row.values[condition_id];
            if (cond < 0 || cond >= static_cast<double>(kConditionVocab) || cond != std::floor(cond)) {
                throw DataError(where(manifest.weather_csv, n) + ": condition id outside the vocabulary");
            }
            rows.push_back(row);
        }
    }
    if (rows.empty()) {
        throw DataError("weather file '" + manifest.weather_csv.string() + "' has no rows");
    }
    Hour first = rows.front().hour, last = rows.front().hour;
    for (const auto& r : rows) {
        first = std::min(first, r.hour);
        last = std::max(last, r.hour);
    }
    ds.start = first;
    ds.hours = static_cast<std::size_t>(last - first + 1);
    ds.weather.assign(ds.hours * cells * kWeatherFields, kNaN);
    std::vector<char> seen(ds.hours * cells, 0);
    for (const auto& r : rows) {
        const auto h = static_cast<std::size_t>(r.hour - first);
        if (seen[h * cells + r.cell]) {
            throw DataError("weather: duplicate row for " + format_timestamp(r.hour));
        }
        seen[h * cells + r.cell] = 1;
        std::copy(r.values.begin(), r.values.end(), ds.weather.begin() + static_cast<std::ptrdiff_t>((h * cells + r.cell) * kWeatherFields));
    }
    for (std::size_t h = 0; h < ds.hours; ++h) {
        for (std::size_t c = 0; c < cells; ++c) {
            if (!seen[h * cells + c]) {
                throw DataError("weather: missing cell (" + std::to_string(c / g.cols) + ", " + std::to_string(c % g.cols) +
                                ") at " + format_timestamp(first + static_cast<Hour>(h)));
            }
        }
    }

    const std::size_t R = ds.stations.size();
    for (auto& p : ds.pollution) {
        p.assign(ds.hours * R, kNaN);
    }
    auto in = open_csv(manifest.pollution_csv, "timestamp,station_id,pm25,pm10,o3");
    std::string line;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) {
            continue;
        }
        const auto f = split_commas(line);
        if (f.size() != 2 + kPollutantCount) {
            throw DataError(where(manifest.pollution_csv, n) + ": expected 5 fields");
        }
        Hour hour = 0;
        try {
            hour = parse_timestamp(f[0]);
        } catch (const DataError& e) {
            throw DataError(where(manifest.pollution_csv, n) + ": " + e.what());
        }
        if (hour < first || hour > last) {
            throw DataError(where(manifest.pollution_csv, n) + ": timestamp outside the weather range");
        }
        std::size_t station = 0;
        try {
            station = ds.stations.index_of(std::string(trim(f[1])));
        } catch (const LookupError& e) {
            throw DataError(where(manifest.pollution_csv, n) + ": " + e.what());
        }
        const auto h = static_cast<std::size_t>(hour - first);
        for (std::size_t k = 0; k < kPollutantCount; ++k) {
            if (trim(f[2 + k]).empty()) {
                continue;
            }
            const double v = parse_number(f[2 + k], manifest.pollution_csv, n);
            if (v < 0) {
                throw DataError(where(manifest.pollution_csv, n) + ": negative concentration");
            }
            ds.pollution[k][h * R + station] = v;
        }
    }
    return ds;
}

void write_pollution_csv(const fs::path& path, const Dataset& ds) {
    auto out = create_file(path);
    out << "timestamp,station_id,pm25,pm10,o3\n";
    const std::size_t R = ds.stations.size();
    for (std::size_t h = 0; h < ds.hours; ++h) {
        const auto ts = format_timestamp(ds.start + static_cast<Hour>(h));
        for (std::size_t s = 0; s < R; ++s) {
            bool any = false;
            for (const auto& p : ds.pollution) {
                any = any || !std::isnan(p[h * R + s]);
            }
            if (!any) {
                continue;
            }
            out << ts << ',' << ds.stations[s].id;
            for (const auto& p : ds.pollution) {
                out << ',' << optional_number(p[h * R + s]);
            }
            out << '\n';
        }
    }
    finish_file(out, path);
}

void write_weather_csv(const fs::path& path, const Dataset& ds) {
    auto out = create_file(path);
    out << "timestamp,row,col,temperature,pressure,humidity,wind_speed,wind_direction,condition_id\n";
    const auto& g = ds.stations.grid();
    for (std::size_t h = 0; h < ds.hours; ++h) {
        const auto ts = format_timestamp(ds.start + static_cast<Hour>(h));
        for (std::size_t r = 0; r < g.rows; ++r) {
            for (std::size_t c = 0; c < g.cols; ++c) {
                out << ts << ',' << r << ',' << c;
                for (std::size_t k = 0; k < kWeatherFields; ++k) {
                    out << ',' << format_number(ds.weather_at(h, r, c, k));
                }
                out << '\n';
            }
        }
    }
    finish_file(out, path);
}

void write_grid_csv(const fs::path& path, Hour start, std::size_t hours, const grid::GridSpec& grid,
                    const std::vector<double>& values) {
    if (values.size() != hours * grid.cell_count()) {
        throw ContractError("write_grid_csv: expected hours×M×N values");
    }
    auto out = create_file(path);
    out << "timestamp,row,col,value\n";
    for (std::size_t h = 0; h < hours; ++h) {
        const auto ts = format_timestamp(start + static_cast<Hour>(h));
        for (std::size_t r = 0; r < grid.rows; ++r) {
            for (std::size_t c = 0; c < grid.cols; ++c) {
                out << ts << ',' << r << ',' << c << ',' << format_number(values[(h * grid.rows + r) * grid.cols + c])
                    << '\n';
            }
        }
    }
    finish_file(out, path);
}

std::vector<double> read_grid_csv(const fs::path& path, Hour start, std::size_t hours, const grid::GridSpec& grid) {
    auto in = open_csv(path, "timestamp,row,col,value");
    std::vector<double> values(hours * grid.cell_count(), kNaN);
    std::string line;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) {
            continue;
        }
        const auto f = split_commas(line);
        if (f.size() != 4) {
            throw DataError(where(path, n) + ": expected 4 fields");
        }
        const Hour hour = parse_timestamp(f[0]);
        const auto r = parse_index(f[1], path, n);
        const auto c = parse_index(f[2], path, n);
        if (hour < start || hour >= start + static_cast<Hour>(hours) || r >= grid.rows || c >= grid.cols) {
            throw DataError(where(path, n) + ": row outside the expected range");
        }
        values[(static_cast<std::size_t>(hour - start) * grid.rows + r) * grid.cols + c] = parse_number(f[3], path, n);
    }
    for (double v : values) {
        if (std::isnan(v)) {
            throw DataError("grid file '" + path.string() + "' does not cover every cell and hour");
        }
    }
    return values;
}

} // namespace distnet::data
