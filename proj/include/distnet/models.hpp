#pragma once

// Forecasting models over SampleWindows: DIST-Net (convolutional spatial
// predictor feeding a GRU encoder, time-axis attention and a GRU decoder) and
// the comparison models sharing its temporal pathway or head.

#include "distnet/features.hpp"
#include "distnet/layers.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace distnet::models {

enum class ModelKind { distnet, mlp, local_seq2seq, neighbor_seq2seq, persistence };

std::string kind_name(ModelKind kind);
/// Throws ConfigError on an unknown name.
ModelKind parse_kind(std::string_view name);

struct ModelConfig {
    std::size_t encoder_length = 72; // T
    std::size_t horizon = 48;        // τ
    std::size_t conv_layers = 3;     // K; 0 feeds the raw target-cell channels
    std::size_t kernel = 3;
    std::size_t conv_channels = 32;  // β
    std::size_t gamma = 9;
    std::size_t hidden = 64;         // δ (= ζ)
    std::size_t hour_embedding = 6;
    std::size_t weekday_embedding = 3;
    std::size_t channels = features::kChannels; // 1 + n
    std::size_t sectors = 8;
    std::size_t mlp_step_units = 32;
    std::vector<std::size_t> mlp_temporal_units{128, 64};

    /// Throws ConfigError when a size is zero or the kernel is even.
    void validate() const;
    std::size_t eta() const { return hour_embedding + weekday_embedding; }
    /// Width of the per-step encoder input g_t for a model kind.
    std::size_t encoder_input(ModelKind kind) const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Encoder GRU, time-axis attention, time embeddings, decoder GRU and output
/// layer, shared by DIST-Net and the two sequence-to-sequence baselines.
struct TemporalPredictor {
    nn::GRUCell encoder;
    Tensor att_weight; // T×τ
    Tensor att_bias;   // τ
    nn::Embedding hour_table;
    nn::Embedding weekday_table;
    nn::GRUCell decoder;
    nn::DenseLayer output; // δ→1, selu

    static TemporalPredictor create(nn::ParameterSet& params, const ModelConfig& cfg, std::size_t input, nn::Rng& rng);

    /// g: T×input → τ outputs before the inverse-normalization map.
    Tensor forward(const Tensor& g, const std::vector<features::TimeIds>& time_ids) const;
};

class Model {
public:
    /// Builds freshly initialized parameters. `target` maps the normalized
    /// output back to the original scale.
    static Model create(ModelKind kind, const ModelConfig& config, const features::FeatureRange& target,
                        std::uint64_t seed);

    ModelKind kind() const { return kind_; }
    const ModelConfig& config() const { return config_; }
    const features::FeatureRange& target() const { return target_; }
    nn::ParameterSet& parameters() { return params_; }
    const nn::ParameterSet& parameters() const { return params_; }
    bool trainable() const { return kind_ != ModelKind::persistence; }

    /// τ-vector in the original scale, not floored. Throws ConfigError naming
    /// the stage when the window does not match the configuration.
    Tensor forward(const features::SampleWindow& window) const;
    /// forward() floored at 0, as reported.
    std::vector<double> predict(const features::SampleWindow& window) const;

    /// Sets the output bias so that a zero input to the output layer predicts
    /// `value` (original scale), clamped into the target range. SMAPE has no
    /// gradient where a prediction is negative, so training starts from the
    /// mean training target instead of wherever the random head lands. The
    /// output head weights are also scaled by 0.1.
    void initialize_output(double value);

    /// Spatial predictor output f (T×β) for DIST-Net.
    Tensor spatial_features(const features::SampleWindow& window) const;
    /// Encoder input g (T×width) for every kind except persistence.
    Tensor encoder_input(const features::SampleWindow& window) const;

    nlohmann::json to_json() const;
    /// Throws VersionError when the stored parameters do not match the stored
    /// configuration.
    static Model from_json(const nlohmann::json& j);

private:
    Model() = default;
    void check_window(const features::SampleWindow& window) const;
    Tensor denormalize(const Tensor& y) const;

    ModelKind kind_ = ModelKind::persistence;
    ModelConfig config_;
    features::FeatureRange target_;
    nn::ParameterSet params_;
    std::vector<nn::ConvLayer> convs_;
    std::optional<TemporalPredictor> temporal_;
    std::vector<nn::DenseLayer> mlp_step_;
    std::vector<nn::DenseLayer> mlp_temporal_;
};

/// T×P×P×C neighborhood of the target cell with P = (kernel-1)·K + 1, zero
/// outside the grid.
Tensor extract_patch(const features::SampleWindow& window, std::size_t radius);

/// T×(sectors·C) neighbor aggregation features of the window's station.
Tensor neighbor_features(const features::SampleWindow& window, std::size_t sectors);

/// Repeats the last observed reading τ times.
std::vector<double> persistence_forecast(const features::SampleWindow& window);

/// Checkpoint: model JSON plus the normalization spec and pollutant the model
/// was trained with.
struct Checkpoint {
    Model model;
    features::NormalizationSpec normalization;
    data::Pollutant pollutant = data::Pollutant::pm25;
    nlohmann::json run_config;
};
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
/// Throws IoError when unreadable and VersionError on a format mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace distnet::models
