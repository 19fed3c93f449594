#include "distnet/models.hpp"

#include "distnet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace distnet::models {

using features::SampleWindow;

std::string kind_name(ModelKind kind) {
    switch (kind) {
    case ModelKind::distnet:
        return "distnet";
    case ModelKind::mlp:
        return "mlp";
    case ModelKind::local_seq2seq:
        return "local_seq2seq";
    case ModelKind::neighbor_seq2seq:
        return "neighbor_seq2seq";
    case ModelKind::persistence:
        return "persistence";
    }
    return "unknown";
}

ModelKind parse_kind(std::string_view name) {
    for (auto k : {ModelKind::distnet, ModelKind::mlp, ModelKind::local_seq2seq, ModelKind::neighbor_seq2seq,
                   ModelKind::persistence}) {
        if (kind_name(k) == name) {
            return k;
        }
    }
    throw ConfigError("unknown model kind '" + std::string(name) +
                      "' (expected distnet, mlp, local_seq2seq, neighbor_seq2seq or persistence)");
}

// ---- configuration ---------------------------------------------------------

void ModelConfig::validate() const {
    for (auto [name, v] : {std::pair<const char*, std::size_t>{"encoder_length", encoder_length},
                           {"horizon", horizon},
                           {"kernel", kernel},
                           {"conv_channels", conv_channels},
                           {"gamma", gamma},
                           {"hidden", hidden},
                           {"hour_embedding", hour_embedding},
                           {"weekday_embedding", weekday_embedding},
                           {"channels", channels},
                           {"sectors", sectors},
                           {"mlp_step_units", mlp_step_units}}) {
        if (v == 0) {
            throw ConfigError(std::string("model config: ") + name + " must be positive");
        }
    }
    if (kernel % 2 == 0) {
        throw ConfigError("model config: kernel must be odd");
    }
    for (auto u : mlp_temporal_units) {
        if (u == 0) {
            throw ConfigError("model config: mlp_temporal_units must be positive");
        }
    }
}

std::size_t ModelConfig::encoder_input(ModelKind kind) const {
    switch (kind) {
    case ModelKind::distnet:
        return (conv_layers == 0 ? channels : conv_channels) + gamma;
    case ModelKind::local_seq2seq:
    case ModelKind::mlp:
        return channels + gamma;
    case ModelKind::neighbor_seq2seq:
        return sectors * channels + channels + gamma;
    case ModelKind::persistence:
        return 0;
    }
    return 0;
}

nlohmann::json ModelConfig::to_json() const {
    return {{"encoder_length", encoder_length},
            {"horizon", horizon},
            {"conv_layers", conv_layers},
            {"kernel", kernel},
            {"conv_channels", conv_channels},
            {"gamma", gamma},
            {"hidden", hidden},
            {"hour_embedding", hour_embedding},
            {"weekday_embedding", weekday_embedding},
            {"channels", channels},
            {"sectors", sectors},
            {"mlp_step_units", mlp_step_units},
            {"mlp_temporal_units", mlp_temporal_units}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.encoder_length = j.value("encoder_length", c.encoder_length);
        c.horizon = j.value("horizon", c.horizon);
        c.conv_layers = j.value("conv_layers", c.conv_layers);
        c.kernel = j.value("kernel", c.kernel);
        c.conv_channels = j.value("conv_channels", c.conv_channels);
        c.gamma = j.value("gamma", c.gamma);
        c.hidden = j.value("hidden", c.hidden);
        c.hour_embedding = j.value("hour_embedding", c.hour_embedding);
        c.weekday_embedding = j.value("weekday_embedding", c.weekday_embedding);
        c.channels = j.value("channels", c.channels);
        c.sectors = j.value("sectors", c.sectors);
        c.mlp_step_units = j.value("mlp_step_units", c.mlp_step_units);
        c.mlp_temporal_units = j.value("mlp_temporal_units", c.mlp_temporal_units);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---- temporal predictor ----------------------------------------------------

TemporalPredictor TemporalPredictor::create(nn::ParameterSet& params, const ModelConfig& cfg, std::size_t input,
                                            nn::Rng& rng) {
    TemporalPredictor tp;
    tp.encoder = nn::GRUCell::create(params, "encoder", input, cfg.hidden, rng);
    tp.att_weight = params.add("attention.weight", nn::init_uniform({cfg.encoder_length, cfg.horizon}, cfg.encoder_length, rng));
    tp.att_bias = params.add("attention.bias", Tensor::zeros({cfg.horizon}, true));
    tp.hour_table = nn::Embedding::create(params, "time.hour", 24, cfg.hour_embedding, rng);
    tp.weekday_table = nn::Embedding::create(params, "time.weekday", 7, cfg.weekday_embedding, rng);
    tp.decoder = nn::GRUCell::create(params, "decoder", cfg.hidden + cfg.eta(), cfg.hidden, rng);
    tp.output = nn::DenseLayer::create(params, "output", cfg.hidden, 1, nn::Activation::selu, rng);
    return tp;
}

Tensor TemporalPredictor::forward(const Tensor& g, const std::vector<features::TimeIds>& time_ids) const {
    const std::size_t T = g.extent(0);
    const std::size_t tau = att_weight.extent(1);
    if (T != att_weight.extent(0)) {
        throw ConfigError("encoder: sequence of " + std::to_string(T) + " steps, attention expects " +
                          std::to_string(att_weight.extent(0)));
    }
    if (time_ids.size() != tau) {
        throw ConfigError("decoder: " + std::to_string(time_ids.size()) + " time ids for a horizon of " +
                          std::to_string(tau));
    }
    const Tensor e = gru_unroll(encoder, g);                       // T×δ
    const Tensor last = slice_rows(e, T - 1, T);                   // 1×δ
    const Tensor att = selu(transpose(bias_add(matmul(transpose(e), att_weight), att_bias))); // τ×δ
    std::vector<std::size_t> hours(tau), days(tau);
    for (std::size_t k = 0; k < tau; ++k) {
        hours[k] = static_cast<std::size_t>(time_ids[k].hour);
        days[k] = static_cast<std::size_t>(time_ids[k].weekday);
    }
    const Tensor h = concat({att, hour_table.lookup(hours), weekday_table.lookup(days)}, 1);
    const Tensor d = gru_unroll(decoder, h, last); // τ×δ
    return reshape(output.forward(d), {tau});
}

// ---- model -----------------------------------------------------------------

Model Model::create(ModelKind kind, const ModelConfig& config, const features::FeatureRange& target,
                    std::uint64_t seed) {
    config.validate();
    if (!(target.max > target.min)) {
        throw ConfigError("model: target range must have max > min");
    }
    Model m;
    m.kind_ = kind;
    m.config_ = config;
    m.target_ = target;
    nn::Rng rng(seed);
    switch (kind) {
    case ModelKind::distnet: {
        std::size_t in = config.channels;
        for (std::size_t l = 0; l < config.conv_layers; ++l) {
            m.convs_.push_back(nn::ConvLayer::create(m.params_, "conv" + std::to_string(l), config.kernel, in,
                                                     config.conv_channels, rng, Padding::valid));
            in = config.conv_channels;
        }
        m.temporal_ = TemporalPredictor::create(m.params_, config, config.encoder_input(kind), rng);
        break;
    }
    case ModelKind::local_seq2seq:
    case ModelKind::neighbor_seq2seq:
        m.temporal_ = TemporalPredictor::create(m.params_, config, config.encoder_input(kind), rng);
        break;
    case ModelKind::mlp: {
        m.mlp_step_.push_back(nn::DenseLayer::create(m.params_, "mlp.step0", config.encoder_input(kind),
                                                     config.mlp_step_units, nn::Activation::selu, rng));
        m.mlp_step_.push_back(
            nn::DenseLayer::create(m.params_, "mlp.step1", config.mlp_step_units, 1, nn::Activation::selu, rng));
        std::size_t in = config.encoder_length;
        for (std::size_t k = 0; k < config.mlp_temporal_units.size(); ++k) {
            m.mlp_temporal_.push_back(nn::DenseLayer::create(m.params_, "mlp.temporal" + std::to_string(k), in,
                                                             config.mlp_temporal_units[k], nn::Activation::selu, rng));
            in = config.mlp_temporal_units[k];
        }
        m.mlp_temporal_.push_back(nn::DenseLayer::create(m.params_, "mlp.head", in, config.horizon,
                                                         nn::Activation::identity, rng));
        break;
    }
    case ModelKind::persistence:
        break;
    }
    return m;
}

void Model::check_window(const SampleWindow& w) const {
    if (!w.series) {
        throw ContractError("model: window has no series");
    }
    if (w.encoder_length != config_.encoder_length) {
        throw ConfigError("input: window has T = " + std::to_string(w.encoder_length) + ", model expects " +
                          std::to_string(config_.encoder_length));
    }
    if (w.horizon != config_.horizon || w.time_ids.size() != config_.horizon) {
        throw ConfigError("input: window has tau = " + std::to_string(w.horizon) + ", model expects " +
                          std::to_string(config_.horizon));
    }
    if (w.series->channels() != config_.channels) {
        throw ConfigError("input: series has " + std::to_string(w.series->channels()) + " channels, model expects " +
                          std::to_string(config_.channels));
    }
    if (w.series->stats_config().gamma() != config_.gamma) {
        throw ConfigError("input: series has gamma = " + std::to_string(w.series->stats_config().gamma()) +
                          ", model expects " + std::to_string(config_.gamma));
    }
}

Tensor extract_patch(const SampleWindow& w, std::size_t radius) {
    const auto& g = w.series->grid();
    const std::size_t P = 2 * radius + 1;
    const std::size_t C = w.series->channels();
    const auto cell = w.cell();
    std::vector<double> v(w.encoder_length * P * P * C, 0.0);
    for (std::size_t t = 0; t < w.encoder_length; ++t) {
        const double* frame = w.series->frame(w.start + t);
        for (std::size_t i = 0; i < P; ++i) {
            const long r = static_cast<long>(cell.row) - static_cast<long>(radius) + static_cast<long>(i);
            if (r < 0 || r >= static_cast<long>(g.rows)) {
                continue;
            }
            for (std::size_t j = 0; j < P; ++j) {
                const long c = static_cast<long>(cell.col) - static_cast<long>(radius) + static_cast<long>(j);
                if (c < 0 || c >= static_cast<long>(g.cols)) {
                    continue;
                }
                std::copy_n(frame + (static_cast<std::size_t>(r) * g.cols + static_cast<std::size_t>(c)) * C, C,
                            v.begin() + static_cast<std::ptrdiff_t>(((t * P + i) * P + j) * C));
            }
        }
    }
    return Tensor::from({w.encoder_length, P, P, C}, std::move(v));
}

Tensor Model::spatial_features(const SampleWindow& w) const {
    if (kind_ != ModelKind::distnet) {
        throw ContractError("spatial_features: only DIST-Net has a spatial predictor");
    }
    check_window(w);
    const std::size_t half = (config_.kernel - 1) / 2;
    const std::size_t radius = half * config_.conv_layers;
    const auto& g = w.series->grid();
    const auto cell = w.cell();
    const std::size_t T = w.encoder_length;
    Tensor x = extract_patch(w, radius);
    // Valid convolutions over the zero-padded patch, with positions outside
    // the grid re-zeroed after each layer, reproduce same-padded convolution
    // over the whole grid at the target cell.
    for (std::size_t l = 0; l < convs_.size(); ++l) {
        x = convs_[l].forward(x);
        const std::size_t S = x.extent(1);
        const long lo = -static_cast<long>((S - 1) / 2);
        bool inside = true;
        std::vector<char> keep(S * S, 1);
        for (std::size_t i = 0; i < S; ++i) {
            for (std::size_t j = 0; j < S; ++j) {
                const long r = static_cast<long>(cell.row) + lo + static_cast<long>(i);
                const long c = static_cast<long>(cell.col) + lo + static_cast<long>(j);
                if (r < 0 || c < 0 || r >= static_cast<long>(g.rows) || c >= static_cast<long>(g.cols)) {
                    keep[i * S + j] = 0;
                    inside = false;
                }
            }
        }
        if (!inside) {
            const std::size_t B = x.extent(3);
            std::vector<double> mask(T * S * S * B);
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t p = 0; p < S * S; ++p) {
                    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>((t * S * S + p) * B), B,
                                keep[p] ? 1.0 : 0.0);
                }
            }
            x = mul(x, Tensor::from(x.shape(), std::move(mask)));
        }
    }
    return reshape(x, {T, x.extent(3)});
}

Tensor neighbor_features(const SampleWindow& w, std::size_t sectors) {
    const auto& s = *w.series;
    const std::size_t R = s.stations().size();
    const std::size_t C = s.channels();
    const auto& members = s.sector_members(w.station);
    if (members.size() != sectors) {
        throw ConfigError("neighbor features: series has " + std::to_string(members.size()) + " sectors, model expects " +
                          std::to_string(sectors));
    }
    std::vector<double> out;
    out.reserve(w.encoder_length * sectors * C);
    std::vector<double> readings(R);
    std::vector<std::vector<double>> weather(R, std::vector<double>(C - 1));
    for (std::size_t t = 0; t < w.encoder_length; ++t) {
        const std::size_t h = w.start + t;
        for (std::size_t i = 0; i < R; ++i) {
            const bool present = i == w.station || !std::isnan(s.station_reading(h, i));
            readings[i] = present ? s.station_series(h, i) : std::nan("");
            const auto cell = s.stations()[i].cell;
            for (std::size_t k = 1; k < C; ++k) {
                weather[i][k - 1] = s.value(h, cell.row, cell.col, k);
            }
        }
        const auto agg = grid::neighbor_aggregate(members, readings, weather, w.station);
        out.insert(out.end(), agg.begin(), agg.end());
    }
    return Tensor::from({w.encoder_length, sectors * C}, std::move(out));
}

Tensor Model::encoder_input(const SampleWindow& w) const {
    check_window(w);
    switch (kind_) {
    case ModelKind::distnet:
        return concat({spatial_features(w), w.stats()}, 1);
    case ModelKind::local_seq2seq:
    case ModelKind::mlp:
        return concat({w.spot_features(), w.stats()}, 1);
    case ModelKind::neighbor_seq2seq:
        return concat({neighbor_features(w, config_.sectors), w.spot_features(), w.stats()}, 1);
    case ModelKind::persistence:
        break;
    }
    throw ContractError("encoder_input: persistence has no encoder");
}

void Model::initialize_output(double value) {
    const double y = std::clamp(target_.transform(value), 0.0, 1.0);
    // Shrunk head weights keep early predictions near `value` and out of the
    // negative region.
    constexpr double kHeadWeightScale = 0.1;
    const char* weight = nullptr;
    if (temporal_) {
        // Inverse of selu on [0, 1].
        params_.get("output.bias").mutable_values()[0] = y / kSeluLambda;
        weight = "output.weight";
    } else if (kind_ == ModelKind::mlp) {
        for (auto& b : params_.get("mlp.head.bias").mutable_values()) {
            b = y;
        }
        weight = "mlp.head.weight";
    }
    if (weight != nullptr) {
        for (auto& w : params_.get(weight).mutable_values()) {
            w *= kHeadWeightScale;
        }
    }
}

Tensor Model::denormalize(const Tensor& y) const { return shift(scale(y, target_.max - target_.min), target_.min); }

Tensor Model::forward(const SampleWindow& w) const {
    check_window(w);
    switch (kind_) {
    case ModelKind::persistence:
        return Tensor::vector(persistence_forecast(w));
    case ModelKind::mlp: {
        Tensor x = encoder_input(w);
        for (const auto& layer : mlp_step_) {
            x = layer.forward(x);
        }
        x = reshape(x, {1, config_.encoder_length});
        for (const auto& layer : mlp_temporal_) {
            x = layer.forward(x);
        }
        return denormalize(reshape(x, {config_.horizon}));
    }
    default:
        return denormalize(temporal_->forward(encoder_input(w), w.time_ids));
    }
}

std::vector<double> Model::predict(const SampleWindow& w) const {
    const Tensor y = forward(w);
    std::vector<double> out(y.values().begin(), y.values().end());
    for (auto& v : out) {
        v = std::max(v, 0.0);
    }
    return out;
}

std::vector<double> persistence_forecast(const SampleWindow& w) {
    return std::vector<double>(w.horizon, w.last_observed());
}

// ---- serialization ---------------------------------------------------------

nlohmann::json Model::to_json() const {
    return {{"kind", kind_name(kind_)},
            {"config", config_.to_json()},
            {"target", {{"name", target_.name}, {"min", target_.min}, {"max", target_.max}}},
            {"parameters", nn::parameters_to_json(params_)}};
}

Model Model::from_json(const nlohmann::json& j) {
    try {
        const auto kind = parse_kind(j.at("kind").get<std::string>());
        const auto config = ModelConfig::from_json(j.at("config"));
        const auto& t = j.at("target");
        const features::FeatureRange target{t.at("name").get<std::string>(), t.at("min").get<double>(),
                                            t.at("max").get<double>()};
        Model m = create(kind, config, target, 0);
        nn::parameters_from_json(m.params_, j.at("parameters"));
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw VersionError(std::string("model: ") + e.what());
    }
}

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path) {
    nlohmann::json j;
    j["format"] = "distnet-checkpoint";
    j["version"] = 1;
    j["pollutant"] = data::pollutant_name(cp.pollutant);
    j["model"] = cp.model.to_json();
    j["normalization"] = cp.normalization.to_json();
    j["run_config"] = cp.run_config;
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write checkpoint '" + path.string() + "'");
    }
    out << j.dump(1) << "\n";
    if (!out) {
        throw IoError("write failed for checkpoint '" + path.string() + "'");
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open checkpoint '" + path.string() + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw VersionError("checkpoint '" + path.string() + "': " + e.what());
    }
    if (j.value("format", "") != "distnet-checkpoint" || j.value("version", 0) != 1) {
        throw VersionError("checkpoint '" + path.string() + "': unsupported format or version");
    }
    try {
        return Checkpoint{Model::from_json(j.at("model")),
                          features::NormalizationSpec::from_json(j.at("normalization")),
                          data::parse_pollutant(j.at("pollutant").get<std::string>()), j.value("run_config", nlohmann::json::object())};
    } catch (const nlohmann::json::exception& e) {
        throw VersionError("checkpoint '" + path.string() + "': " + e.what());
    } catch (const ConfigError& e) {
        throw VersionError("checkpoint '" + path.string() + "': " + e.what());
    }
}

} // namespace distnet::models
