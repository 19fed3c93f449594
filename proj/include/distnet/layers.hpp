#pragma once

#include "distnet/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace distnet::nn {

/// Portable 64-bit generator plus the handful of draws initialization needs.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    std::uint64_t next();
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller.
    double normal();
    std::size_t below(std::size_t n);

private:
    std::uint64_t state_;
};

/// Named, ordered collection of trainable leaves. Layers keep handles to the
/// same tensors, so optimizer writes are visible to every forward pass.
class ParameterSet {
public:
    Tensor& add(std::string name, Tensor tensor);
    const Tensor& get(std::string_view name) const;
    Tensor& get(std::string_view name);
    bool contains(std::string_view name) const;

    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const;
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

    void zero_grad();
    /// Deep copy (fresh leaves, no gradients).
    ParameterSet clone() const;
    /// Overwrites values from `other`; names and shapes must match.
    void assign(const ParameterSet& other);

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Fan-in scaled uniform on ±sqrt(3 / fan_in) (unit-variance signal under SELU).
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

enum class Activation { identity, selu };

Tensor activate(const Tensor& x, Activation act);

struct ConvLayer {
    Tensor kernels; // k×k×C_in×C_out
    Tensor bias;    // C_out
    Padding padding = Padding::same;

    static ConvLayer create(ParameterSet& params, const std::string& prefix, std::size_t kernel, std::size_t c_in,
                            std::size_t c_out, Rng& rng, Padding padding = Padding::same);

    std::size_t kernel_size() const { return kernels.extent(0); }
    std::size_t in_channels() const { return kernels.extent(2); }
    std::size_t out_channels() const { return kernels.extent(3); }

    /// selu(conv2d(x)); x is H×W×C_in or B×H×W×C_in.
    Tensor forward(const Tensor& x) const;
};

/// Applies the layers in order with selu after each. Throws ConfigError when
/// the channel chain is broken.
Tensor conv_stack_forward(const Tensor& input, const std::vector<ConvLayer>& layers);

struct DenseLayer {
    Tensor weight; // in×out
    Tensor bias;   // out
    Activation activation = Activation::identity;

    static DenseLayer create(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out,
                             Activation activation, Rng& rng);

    std::size_t in_features() const { return weight.extent(0); }
    std::size_t out_features() const { return weight.extent(1); }

    /// rows×in → rows×out.
    Tensor forward(const Tensor& x) const;
};

struct Embedding {
    Tensor table; // vocab×dim

    static Embedding create(ParameterSet& params, const std::string& prefix, std::size_t vocab, std::size_t dim,
                            Rng& rng);

    std::size_t vocab() const { return table.extent(0); }
    std::size_t dim() const { return table.extent(1); }
    Tensor lookup(std::span<const std::size_t> ids) const;
};

/// z = σ(x·W_z + h·U_z + b_z), r = σ(x·W_r + h·U_r + b_r),
/// h̃ = tanh(x·W_h + (r⊙h)·U_h + b_h), h' = (1 − z)⊙h + z⊙h̃.
struct GRUCell {
    Tensor w_z, w_r, w_h; // input×hidden
    Tensor u_z, u_r, u_h; // hidden×hidden
    Tensor b_z, b_r, b_h; // hidden

    static GRUCell create(ParameterSet& params, const std::string& prefix, std::size_t input, std::size_t hidden,
                          Rng& rng);

    std::size_t input_size() const { return w_z.extent(0); }
    std::size_t hidden_size() const { return u_z.extent(0); }
};

/// One recurrence step on vectors x[input], h[hidden].
Tensor gru_step(const GRUCell& cell, const Tensor& x, const Tensor& h);

/// Runs the cell over the rows of `inputs` (T×input) and returns all T hidden
/// states (T×hidden). An undefined `h0` means zeros.
Tensor gru_unroll(const GRUCell& cell, const Tensor& inputs, const Tensor& h0 = {});

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> first;
    std::vector<std::vector<double>> second;
};

/// Bias-corrected Adam update of every parameter from its accumulated
/// gradient (missing gradients count as zero). Throws NumericError naming the
/// parameter when a gradient is non-finite.
void adam_step(AdamState& state, ParameterSet& params);

/// JSON manifest of named tensors; values stored as hex-encoded IEEE-754 bits
/// so the round trip is exact.
nlohmann::json parameters_to_json(const ParameterSet& params);
/// Loads values into an already-shaped set. Throws VersionError on a name or
/// shape mismatch.
void parameters_from_json(ParameterSet& params, const nlohmann::json& manifest);

std::string encode_doubles_hex(std::span<const double> values);
std::vector<double> decode_doubles_hex(std::string_view hex);

} // namespace distnet::nn
