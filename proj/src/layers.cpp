#include "distnet/layers.hpp"

#include "distnet/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace distnet::nn {

// ---- Rng -------------------------------------------------------------------

Rng::Rng(std::uint64_t seed) : state_(seed) {}

// splitmix64
std::uint64_t Rng::next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) { return n == 0 ? 0 : static_cast<std::size_t>(next() % n); }

// ---- ParameterSet ----------------------------------------------------------

Tensor& ParameterSet::add(std::string name, Tensor tensor) {
    if (contains(name)) {
        throw ConfigError("duplicate parameter name '" + name + "'");
    }
    if (!tensor.is_leaf() || !tensor.requires_grad()) {
        throw ContractError("parameter '" + name + "' must be a requires_grad leaf");
    }
    entries_.emplace_back(std::move(name), std::move(tensor));
    return entries_.back().second;
}

bool ParameterSet::contains(std::string_view name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

const Tensor& ParameterSet::get(std::string_view name) const {
    for (const auto& [n, t] : entries_) {
        if (n == name) {
            return t;
        }
    }
    throw LookupError("unknown parameter '" + std::string(name) + "'");
}

Tensor& ParameterSet::get(std::string_view name) {
    return const_cast<Tensor&>(static_cast<const ParameterSet&>(*this).get(name));
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        n += e.second.size();
    }
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& e : entries_) {
        e.second.zero_grad();
    }
}

ParameterSet ParameterSet::clone() const {
    ParameterSet out;
    for (const auto& [n, t] : entries_) {
        out.add(n, t.clone(true));
    }
    return out;
}

void ParameterSet::assign(const ParameterSet& other) {
    if (other.size() != size()) {
        throw VersionError("parameter sets differ in size: " + std::to_string(size()) + " vs " +
                           std::to_string(other.size()));
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto& [name, dst] = entries_[i];
        const auto& [other_name, src] = other.entries_[i];
        if (name != other_name || dst.shape() != src.shape()) {
            throw VersionError("parameter mismatch: " + name + shape_string(dst.shape()) + " vs " + other_name +
                               shape_string(src.shape()));
        }
        std::copy(src.values().begin(), src.values().end(), dst.mutable_values().begin());
    }
}

// ---- initialization and activations ----------------------------------------

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double limit = std::sqrt(3.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::vector<double> v(numel(shape));
    for (auto& x : v) {
        x = rng.uniform(-limit, limit);
    }
    return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor activate(const Tensor& x, Activation act) { return act == Activation::selu ? selu(x) : x; }

// ---- conv ------------------------------------------------------------------

ConvLayer ConvLayer::create(ParameterSet& params, const std::string& prefix, std::size_t kernel, std::size_t c_in,
                            std::size_t c_out, Rng& rng, Padding padding) {
    if (kernel == 0 || c_in == 0 || c_out == 0) {
        throw ConfigError(prefix + ": convolution extents must be positive");
    }
    if (padding == Padding::same && kernel % 2 == 0) {
        throw ConfigError(prefix + ": same-padded kernels must have odd extent, got " + std::to_string(kernel));
    }
    ConvLayer layer;
    layer.kernels = params.add(prefix + ".kernels", init_uniform({kernel, kernel, c_in, c_out}, kernel * kernel * c_in, rng));
    layer.bias = params.add(prefix + ".bias", Tensor::zeros({c_out}, true));
    layer.padding = padding;
    return layer;
}

Tensor ConvLayer::forward(const Tensor& x) const { return selu(conv2d(x, kernels, bias, padding)); }

Tensor conv_stack_forward(const Tensor& input, const std::vector<ConvLayer>& layers) {
    if (input.rank() != 3 && input.rank() != 4) {
        throw ConfigError("conv stack: input must be M×N×C or T×M×N×C, got " + shape_string(input.shape()));
    }
    std::size_t channels = input.shape().back();
    for (std::size_t k = 0; k < layers.size(); ++k) {
        if (layers[k].in_channels() != channels) {
            throw ConfigError("conv stack: layer " + std::to_string(k) + " expects " +
                              std::to_string(layers[k].in_channels()) + " channels, receives " +
                              std::to_string(channels));
        }
        channels = layers[k].out_channels();
    }
    Tensor x = input;
    for (const auto& layer : layers) {
        x = layer.forward(x);
    }
    return x;
}

// ---- dense / embedding -----------------------------------------------------

DenseLayer DenseLayer::create(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out,
                              Activation activation, Rng& rng) {
    if (in == 0 || out == 0) {
        throw ConfigError(prefix + ": dense extents must be positive");
    }
    DenseLayer layer;
    layer.weight = params.add(prefix + ".weight", init_uniform({in, out}, in, rng));
    layer.bias = params.add(prefix + ".bias", Tensor::zeros({out}, true));
    layer.activation = activation;
    return layer;
}

Tensor DenseLayer::forward(const Tensor& x) const {
    return activate(bias_add(matmul(x, weight), bias), activation);
}

Embedding Embedding::create(ParameterSet& params, const std::string& prefix, std::size_t vocab, std::size_t dim,
                            Rng& rng) {
    if (vocab == 0 || dim == 0) {
        throw ConfigError(prefix + ": embedding extents must be positive");
    }
    Embedding e;
    e.table = params.add(prefix + ".table", init_uniform({vocab, dim}, dim, rng));
    return e;
}

Tensor Embedding::lookup(std::span<const std::size_t> ids) const { return gather_rows(table, ids); }

// ---- GRU -------------------------------------------------------------------

GRUCell GRUCell::create(ParameterSet& params, const std::string& prefix, std::size_t input, std::size_t hidden,
                        Rng& rng) {
    if (input == 0 || hidden == 0) {
        throw ConfigError(prefix + ": GRU extents must be positive");
    }
    GRUCell c;
    c.w_z = params.add(prefix + ".w_z", init_uniform({input, hidden}, input, rng));
    c.w_r = params.add(prefix + ".w_r", init_uniform({input, hidden}, input, rng));
    c.w_h = params.add(prefix + ".w_h", init_uniform({input, hidden}, input, rng));
    c.u_z = params.add(prefix + ".u_z", init_uniform({hidden, hidden}, hidden, rng));
    c.u_r = params.add(prefix + ".u_r", init_uniform({hidden, hidden}, hidden, rng));
    c.u_h = params.add(prefix + ".u_h", init_uniform({hidden, hidden}, hidden, rng));
    c.b_z = params.add(prefix + ".b_z", Tensor::zeros({hidden}, true));
    c.b_r = params.add(prefix + ".b_r", Tensor::zeros({hidden}, true));
    c.b_h = params.add(prefix + ".b_h", Tensor::zeros({hidden}, true));
    return c;
}

namespace {

// Step with the input projections (1×hidden rows, biases included) already
// computed.
Tensor gru_recur(const GRUCell& cell, const Tensor& xz, const Tensor& xr, const Tensor& xh, const Tensor& h) {
    Tensor z = sigmoid(xz + matmul(h, cell.u_z));
    Tensor r = sigmoid(xr + matmul(h, cell.u_r));
    Tensor candidate = tanh(xh + matmul(r * h, cell.u_h));
    return h + z * (candidate - h);
}

void check_cell(const GRUCell& cell) {
    const auto in = cell.input_size();
    const auto hid = cell.hidden_size();
    for (const auto* w : {&cell.w_z, &cell.w_r, &cell.w_h}) {
        if (w->shape() != Shape{in, hid}) {
            throw DimensionError("GRU input weight " + shape_string(w->shape()) + " inconsistent with (" +
                                 std::to_string(in) + ", " + std::to_string(hid) + ")");
        }
    }
    for (const auto* u : {&cell.u_z, &cell.u_r, &cell.u_h}) {
        if (u->shape() != Shape{hid, hid}) {
            throw DimensionError("GRU recurrent weight " + shape_string(u->shape()) + " is not " +
                                 std::to_string(hid) + "x" + std::to_string(hid));
        }
    }
    for (const auto* b : {&cell.b_z, &cell.b_r, &cell.b_h}) {
        if (b->shape() != Shape{hid}) {
            throw DimensionError("GRU bias " + shape_string(b->shape()) + " is not [" + std::to_string(hid) + "]");
        }
    }
}

} // namespace

Tensor gru_step(const GRUCell& cell, const Tensor& x, const Tensor& h) {
    check_cell(cell);
    const auto in = cell.input_size();
    const auto hid = cell.hidden_size();
    if (x.shape() != Shape{in} || h.shape() != Shape{hid}) {
        throw DimensionError("gru_step: x " + shape_string(x.shape()) + " / h " + shape_string(h.shape()) +
                             " do not match cell (" + std::to_string(in) + ", " + std::to_string(hid) + ")");
    }
    Tensor xr = reshape(x, {1, in});
    Tensor hr = reshape(h, {1, hid});
    Tensor out = gru_recur(cell, bias_add(matmul(xr, cell.w_z), cell.b_z), bias_add(matmul(xr, cell.w_r), cell.b_r),
                           bias_add(matmul(xr, cell.w_h), cell.b_h), hr);
    return reshape(out, {hid});
}

Tensor gru_unroll(const GRUCell& cell, const Tensor& inputs, const Tensor& h0) {
    check_cell(cell);
    if (inputs.rank() != 2 || inputs.extent(1) != cell.input_size()) {
        throw DimensionError("gru_unroll: inputs " + shape_string(inputs.shape()) + " do not match input size " +
                             std::to_string(cell.input_size()));
    }
    const std::size_t steps = inputs.extent(0);
    if (steps == 0) {
        throw ContractError("gru_unroll: empty sequence");
    }
    const std::size_t hid = cell.hidden_size();
    Tensor h = h0.defined() ? reshape(h0, {1, hid}) : Tensor::zeros({1, hid});
    if (h0.defined() && h0.size() != hid) {
        throw DimensionError("gru_unroll: h0 " + shape_string(h0.shape()) + " is not [" + std::to_string(hid) + "]");
    }
    const Tensor xz = bias_add(matmul(inputs, cell.w_z), cell.b_z);
    const Tensor xr = bias_add(matmul(inputs, cell.w_r), cell.b_r);
    const Tensor xh = bias_add(matmul(inputs, cell.w_h), cell.b_h);
    std::vector<Tensor> states;
    states.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        h = gru_recur(cell, slice_rows(xz, t, t + 1), slice_rows(xr, t, t + 1), slice_rows(xh, t, t + 1), h);
        states.push_back(h);
    }
    return concat(states, 0);
}

// ---- Adam ------------------------------------------------------------------

void adam_step(AdamState& state, ParameterSet& params) {
    auto& entries = params.entries();
    if (state.first.empty()) {
        for (const auto& e : entries) {
            state.first.emplace_back(e.second.size(), 0.0);
            state.second.emplace_back(e.second.size(), 0.0);
        }
    }
    if (state.first.size() != entries.size()) {
        throw ContractError("adam_step: optimizer state tracks " + std::to_string(state.first.size()) +
                            " parameters, set has " + std::to_string(entries.size()));
    }
    for (std::size_t k = 0; k < entries.size(); ++k) {
        for (double g : entries[k].second.grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient in parameter '" + entries[k].first + "'");
            }
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t k = 0; k < entries.size(); ++k) {
        auto& param = entries[k].second;
        auto values = param.mutable_values();
        const auto grad = param.grad();
        auto& m = state.first[k];
        auto& v = state.second[k];
        if (m.size() != values.size()) {
            throw ContractError("adam_step: moment shape mismatch for '" + entries[k].first + "'");
        }
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grad.empty() ? 0.0 : grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            values[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

// ---- checkpoint ------------------------------------------------------------

std::string encode_doubles_hex(std::span<const double> values) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(values.size() * 16);
    for (double v : values) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int shift = 60; shift >= 0; shift -= 4) {
            out.push_back(digits[(bits >> shift) & 0xf]);
        }
    }
    return out;
}

std::vector<double> decode_doubles_hex(std::string_view hex) {
    if (hex.size() % 16 != 0) {
        throw VersionError("hex payload length " + std::to_string(hex.size()) + " is not a multiple of 16");
    }
    std::vector<double> out(hex.size() / 16);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint64_t bits = 0;
        for (std::size_t j = 0; j < 16; ++j) {
            const char c = hex[i * 16 + j];
            std::uint64_t d = 0;
            if (c >= '0' && c <= '9') {
                d = static_cast<std::uint64_t>(c - '0');
            } else if (c >= 'a' && c <= 'f') {
                d = static_cast<std::uint64_t>(c - 'a' + 10);
            } else {
                throw VersionError(std::string("invalid hex digit '") + c + "'");
            }
            bits = (bits << 4) | d;
        }
        out[i] = std::bit_cast<double>(bits);
    }
    return out;
}

nlohmann::json parameters_to_json(const ParameterSet& params) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& [name, t] : params.entries()) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"bits", encode_doubles_hex(t.values())}});
    }
    return {{"format", "distnet-parameters"}, {"version", 1}, {"tensors", tensors}};
}

void parameters_from_json(ParameterSet& params, const nlohmann::json& manifest) {
    if (manifest.value("format", "") != "distnet-parameters" || manifest.value("version", 0) != 1) {
        throw VersionError("unsupported parameter manifest format");
    }
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != params.size()) {
        throw VersionError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                           std::to_string(params.size()));
    }
    for (const auto& item : tensors) {
        const auto name = item.at("name").get<std::string>();
        if (!params.contains(name)) {
            throw VersionError("checkpoint tensor '" + name + "' is not a model parameter");
        }
        auto& dst = params.get(name);
        const auto shape = item.at("shape").get<Shape>();
        if (shape != dst.shape()) {
            throw VersionError("checkpoint tensor '" + name + "' has shape " + shape_string(shape) + ", model expects " +
                               shape_string(dst.shape()));
        }
        const auto values = decode_doubles_hex(item.at("bits").get<std::string>());
        if (values.size() != dst.size()) {
            throw VersionError("checkpoint tensor '" + name + "' payload has the wrong length");
        }
        std::copy(values.begin(), values.end(), dst.mutable_values().begin());
    }
}

} // namespace distnet::nn
