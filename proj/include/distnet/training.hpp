#pragma once

// SMAPE objective and the mini-batch Adam training loop with early stopping
// on validation SMAPE.

#include "distnet/models.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace distnet::training {

/// (2/τ)·Σ |p − y| / max(|p| + |y|, ε) as a differentiable scalar. Throws
/// ContractError on a length mismatch, negative truth or ε ≤ 0.
Tensor smape_loss(const Tensor& pred, std::span<const double> truth, double epsilon = 1.0);

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t max_epochs = 50;
    /// Epochs without a validation improvement before stopping.
    std::size_t patience = 5;
    std::uint64_t seed = 1;
    double epsilon = 1.0; // SMAPE denominator floor
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    /// Stop after this many Adam steps; 0 = no limit.
    std::size_t max_steps = 0;
    /// Stop once an epoch's mean training loss falls below this; 0 = off.
    double target_loss = 0.0;

    /// Throws ConfigError unless batch ≥ 1, ε > 0 and the Adam settings are valid.
    void validate() const;
    nlohmann::json to_json() const;
    /// Missing keys keep their defaults.
    static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    std::size_t steps = 0; // cumulative Adam steps at the end of the epoch
    double train_loss = 0.0;
    double val_smape = 0.0;
    double val_rmse = 0.0;
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0; // 0 when nothing was trained
    double best_val_smape = 0.0;
    std::size_t steps = 0;
    std::string stop_reason;
    std::filesystem::path best_checkpoint;

    /// `epoch,train_loss,val_smape,val_rmse,seconds`.
    void write_csv(const std::filesystem::path& path) const;
    nlohmann::json to_json() const;
};

/// Called whenever the validation SMAPE improves, with the model holding the
/// new best parameters.
using ImprovementHook = std::function<void(const models::Model&, const EpochRecord&)>;

/// Trains `model` in place and leaves it holding the best-validation
/// parameters. Throws ContractError on empty splits, NumericError naming the
/// offending windows when a loss or gradient is not finite.
TrainReport train(models::Model& model, const std::vector<features::SampleWindow>& train_windows,
                  const std::vector<features::SampleWindow>& val_windows, const TrainConfig& config,
                  const ImprovementHook& on_improved = {});

/// Mean SMAPE loss of the unfloored predictions over a window set.
double mean_loss(const models::Model& model, const std::vector<features::SampleWindow>& windows,
                 double epsilon = 1.0);

} // namespace distnet::training
