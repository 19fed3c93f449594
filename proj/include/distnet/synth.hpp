#pragma once

// Synthetic pollutant fields: explicit finite-volume advection-diffusion with
// first-order upwind fluxes, zero-flux boundaries, diurnal point sources,
// first-order decay with rain washout, and a matching synthetic weather grid.

#include "distnet/data.hpp"
#include "distnet/grid.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace distnet::synth {

struct Source {
    std::size_t row = 0;
    std::size_t col = 0;
    double rate = 0.0;              // mass per hour
    double diurnal_amplitude = 0.0; // relative, in [0, 1]
    int peak_hour = 8;
};

/// Uniform wind: a daily cycle plus a smooth random (AR(1)) component.
struct WindConfig {
    double mean_speed = 2.5;      // m/s
    double speed_amplitude = 1.0; // m/s, daily cycle
    double mean_direction = 200.0; // degrees the wind blows from
    double direction_amplitude = 40.0;
    double period_hours = 24.0;
    double random_speed = 1.0;      // m/s, stationary std of the random part
    double random_direction = 60.0; // degrees
    double correlation_hours = 12.0;
};

enum class FieldMode { dynamic, constant, linear };

struct SynthConfig {
    grid::GridSpec grid{6, 6, 39.6, 115.9, 0.1};
    data::Hour start = 0;
    std::size_t hours = 0;
    std::size_t stations = 5;
    double diffusion = 0.05; // cells² per hour
    /// Fraction of the reported wind speed that moves the near-surface field.
    /// Values below 1 keep plumes from piling up against the closed walls of
    /// small grids.
    double transport_scale = 1.0;
    WindConfig wind;
    std::vector<Source> sources;
    double decay = 0.02;          // per hour
    double washout = 0.08;        // extra decay per hour while raining
    double background = 0.5;      // concentration units per hour, every cell
    double initial = 20.0;
    double noise_std = 1.0;
    double missing_rate = 0.0;    // probability a station reading is absent
    /// Internal step in hours; 0 chooses substeps from the stability bound.
    double dt = 0.0;
    double train_fraction = 0.8;
    FieldMode mode = FieldMode::dynamic;
    /// Linear mode: value = a + b·x + c·y in grid coordinates.
    std::array<double, 3> linear{10.0, 2.0, 3.0};
    std::uint64_t seed = 1;

    /// Throws ConfigError on negative rates, an empty grid, or a station count
    /// of zero.
    void validate() const;
};

/// Per-pollutant scale of the shared sources and decay.
struct SpeciesTraits {
    double source_scale;
    double decay_scale;
    double background_scale;
};
inline constexpr std::array<SpeciesTraits, data::kPollutantCount> kSpecies{
    SpeciesTraits{1.0, 1.0, 1.0}, SpeciesTraits{1.6, 0.8, 1.4}, SpeciesTraits{0.3, 1.5, 3.0}};

/// One explicit step of ∂c/∂t = -∇·(u c) + D ∇²c on a rows×cols field with
/// unit cells. Fluxes through the outer boundary are zero, so the sum of the
/// field is conserved. `u` is eastward (+col), `v` northward (+row), both in
/// cells per hour. Throws ConfigError when dt violates the stability bounds
/// D·dt ≤ 0.25 and dt·(|u| + |v| + 4D) ≤ 1.
void advect_diffuse_step(std::vector<double>& field, std::size_t rows, std::size_t cols, double u, double v,
                         double diffusion, double dt);

/// Largest stable step for the given wind and diffusion.
double stable_dt(double u, double v, double diffusion);

struct SynthResult {
    SynthConfig config;
    data::Dataset dataset;
    /// True fields per pollutant, hours×M×N.
    std::array<std::vector<double>, data::kPollutantCount> truth;
    data::Hour train_cutoff = 0;
    std::size_t substeps = 0; // total internal steps taken
};

SynthResult generate(const SynthConfig& config);

/// Writes stations.csv, pollution.csv, weather.csv, truth.csv (PM2.5 truth)
/// and manifest.json into `dir`; returns the manifest path.
std::filesystem::path write_dataset(const SynthResult& result, const std::filesystem::path& dir);

/// Names accepted by preset(): tiny, beijing-like, constant, linear.
std::vector<std::string> preset_names();
/// Throws LookupError on an unknown name.
SynthConfig preset(const std::string& name, std::uint64_t seed);

} // namespace distnet::synth
