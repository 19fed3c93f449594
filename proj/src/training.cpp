#include "distnet/training.hpp"

#include "distnet/errors.hpp"
#include "distnet/eval.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace distnet::training {

Tensor smape_loss(const Tensor& pred, std::span<const double> truth, double epsilon) {
    if (!(epsilon > 0.0)) {
        throw ContractError("smape_loss: epsilon must be positive");
    }
    if (pred.size() != truth.size() || truth.empty()) {
        throw ContractError("smape_loss: prediction has " + std::to_string(pred.size()) + " values, truth has " +
                            std::to_string(truth.size()));
    }
    std::vector<double> y(truth.begin(), truth.end());
    std::vector<double> ay(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!(y[i] >= 0.0)) {
            throw ContractError("smape_loss: truth must be nonnegative and finite");
        }
        ay[i] = std::fabs(y[i]);
    }
    const Tensor p = reshape(pred, {y.size()});
    const Tensor target = Tensor::vector(std::move(y));
    const Tensor denom = clamp_min(add(abs(p), Tensor::vector(std::move(ay))), epsilon);
    return scale(sum(div(abs(sub(p, target)), denom)), 2.0 / static_cast<double>(truth.size()));
}

// ---- configuration ---------------------------------------------------------

void TrainConfig::validate() const {
    if (batch_size == 0) {
        throw ConfigError("train config: batch_size must be at least 1");
    }
    if (!(epsilon > 0.0)) {
        throw ConfigError("train config: epsilon must be positive");
    }
    if (!(learning_rate > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
        !(adam_epsilon > 0.0)) {
        throw ConfigError("train config: invalid Adam settings");
    }
    if (!(target_loss >= 0.0)) {
        throw ConfigError("train config: target_loss must be nonnegative");
    }
}

nlohmann::json TrainConfig::to_json() const {
    return {{"batch_size", batch_size},   {"max_epochs", max_epochs},     {"patience", patience},
            {"seed", seed},               {"epsilon", epsilon},           {"learning_rate", learning_rate},
            {"beta1", beta1},             {"beta2", beta2},               {"adam_epsilon", adam_epsilon},
            {"max_steps", max_steps},     {"target_loss", target_loss}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.patience = j.value("patience", c.patience);
        c.seed = j.value("seed", c.seed);
        c.epsilon = j.value("epsilon", c.epsilon);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.target_loss = j.value("target_loss", c.target_loss);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---- report ----------------------------------------------------------------

void TrainReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write '" + path.string() + "'");
    }
    out << "epoch,train_loss,val_smape,val_rmse,seconds\n";
    for (const auto& e : epochs) {
        out << e.epoch << ',' << data::format_number(e.train_loss) << ',' << data::format_number(e.val_smape) << ','
            << data::format_number(e.val_rmse) << ',' << data::format_number(e.seconds) << '\n';
    }
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

nlohmann::json TrainReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : epochs) {
        rows.push_back({{"epoch", e.epoch},
                        {"steps", e.steps},
                        {"train_loss", e.train_loss},
                        {"val_smape", e.val_smape},
                        {"val_rmse", e.val_rmse},
                        {"seconds", e.seconds}});
    }
    return {{"epochs", rows},
            {"best_epoch", best_epoch},
            {"best_val_smape", best_val_smape},
            {"steps", steps},
            {"stop_reason", stop_reason},
            {"best_checkpoint", best_checkpoint.string()}};
}

// ---- loop ------------------------------------------------------------------

namespace {

std::string describe(const features::SampleWindow& w, std::size_t index) {
    std::ostringstream s;
    s << "window " << index << " (station " << w.series->stations()[w.station].id << ", issued "
      << data::format_timestamp(w.issue_time()) << ")";
    return s.str();
}

struct Validation {
    double smape = 0.0;
    double rmse = 0.0;
};

Validation validate(const models::Model& model, const std::vector<features::SampleWindow>& windows, double eps) {
    std::vector<double> p, y;
    for (const auto& f : eval::forecast_windows(model, windows)) {
        p.insert(p.end(), f.prediction.begin(), f.prediction.end());
        y.insert(y.end(), f.truth.begin(), f.truth.end());
    }
    return {eval::smape_metric(p, y, eps), eval::rmse_metric(p, y)};
}

} // namespace

double mean_loss(const models::Model& model, const std::vector<features::SampleWindow>& windows, double epsilon) {
    if (windows.empty()) {
        throw ContractError("mean_loss: no windows");
    }
    double total = 0.0;
    for (const auto& w : windows) {
        total += smape_loss(model.forward(w), w.target, epsilon).item();
    }
    return total / static_cast<double>(windows.size());
}

TrainReport train(models::Model& model, const std::vector<features::SampleWindow>& train_windows,
                  const std::vector<features::SampleWindow>& val_windows, const TrainConfig& config,
                  const ImprovementHook& on_improved) {
    config.validate();
    if (train_windows.empty() || val_windows.empty()) {
        throw ContractError("train: training and validation windows must be nonempty");
    }
    TrainReport report;
    using clock = std::chrono::steady_clock;

    if (!model.trainable()) {
        const auto start = clock::now();
        const auto v = validate(model, val_windows, config.epsilon);
        EpochRecord rec{0, 0, mean_loss(model, train_windows, config.epsilon), v.smape, v.rmse,
                        std::chrono::duration<double>(clock::now() - start).count()};
        report.epochs.push_back(rec);
        report.best_val_smape = v.smape;
        report.stop_reason = "model has no trainable parameters";
        if (on_improved) {
            on_improved(model, rec);
        }
        return report;
    }

    auto& params = model.parameters();
    nn::AdamState adam;
    adam.lr = config.learning_rate;
    adam.beta1 = config.beta1;
    adam.beta2 = config.beta2;
    adam.epsilon = config.adam_epsilon;

    nn::Rng rng(config.seed);
    std::vector<std::size_t> order(train_windows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    nn::ParameterSet best = params.clone();
    double best_smape = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto start = clock::now();
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        double loss_sum = 0.0;
        std::size_t seen = 0;
        bool step_limit = false;
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            const std::size_t end = std::min(order.size(), b + config.batch_size);
            const double inv = 1.0 / static_cast<double>(end - b);
            params.zero_grad();
            for (std::size_t k = b; k < end; ++k) {
                const auto& w = train_windows[order[k]];
                Tensor loss;
                try {
                    loss = smape_loss(model.forward(w), w.target, config.epsilon);
                    if (!std::isfinite(loss.item())) {
                        throw NumericError("non-finite loss");
                    }
                    backward(scale(loss, inv));
                } catch (const NumericError& e) {
                    throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + " in " +
                                       describe(w, order[k]));
                }
                loss_sum += loss.item();
                ++seen;
            }
            try {
                nn::adam_step(adam, params);
            } catch (const NumericError& e) {
                std::string ids;
                for (std::size_t k = b; k < end; ++k) {
                    ids += (ids.empty() ? "" : ", ") + std::to_string(order[k]);
                }
                throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + "; batch windows " +
                                   ids);
            }
            ++report.steps;
            if (config.max_steps != 0 && report.steps >= config.max_steps) {
                step_limit = true;
                break;
            }
        }
        params.zero_grad();
        const auto v = validate(model, val_windows, config.epsilon);
        EpochRecord rec{epoch, report.steps, loss_sum / static_cast<double>(seen), v.smape, v.rmse, 0.0};
        rec.seconds = std::chrono::duration<double>(clock::now() - start).count();
        report.epochs.push_back(rec);

        if (v.smape < best_smape) {
            best_smape = v.smape;
            best.assign(params);
            report.best_epoch = epoch;
            report.best_val_smape = v.smape;
            since_best = 0;
            if (on_improved) {
                on_improved(model, rec);
            }
        } else {
            ++since_best;
        }
        if (step_limit) {
            report.stop_reason = "step limit reached";
            break;
        }
        if (config.target_loss > 0.0 && rec.train_loss < config.target_loss) {
            report.stop_reason = "target training loss reached";
            break;
        }
        if (since_best > config.patience) {
            report.stop_reason = "no validation improvement for " + std::to_string(since_best) + " epochs";
            break;
        }
    }
    if (report.stop_reason.empty()) {
        report.stop_reason = "epoch limit reached";
    }
    params.assign(best);
    return report;
}

} // namespace distnet::training
