#include "distnet/tensor.hpp"

#include "distnet/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace distnet {

namespace {

using NodePtr = std::shared_ptr<detail::Node>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
// Every Buffer is 64-byte aligned (see AlignedAllocator).
using AlignedMap = Eigen::Map<RowMatrix, Eigen::Aligned64>;
using ConstAlignedMap = Eigen::Map<const RowMatrix, Eigen::Aligned64>;

const NodePtr& checked(const Tensor& t, const char* op) {
    if (!t.defined()) {
        throw ContractError(std::string(op) + ": undefined tensor operand");
    }
    return t.node();
}

void require_finite(std::span<const double> values, const char* op) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite value produced");
        }
    }
}

// Creates the result node of `op`. The graph edges are kept only when some
// parent needs a gradient.
NodePtr make_result(const char* op, Shape shape, Buffer value, std::vector<NodePtr> parents) {
    require_finite(value, op);
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->leaf = false;
    node->op = op;
    node->requires_grad = std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
    if (node->requires_grad) {
        node->parents = std::move(parents);
    }
    return node;
}

void accumulate(detail::Node& parent, std::span<const double> delta) {
    if (!parent.requires_grad) {
        return;
    }
    auto& g = parent.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += delta[i];
    }
}

bool is_scalar(const detail::Node& n) { return n.shape.empty(); }

Shape broadcast_shape(const detail::Node& a, const detail::Node& b, const char* op) {
    if (a.shape == b.shape) {
        return a.shape;
    }
    if (is_scalar(a)) {
        return b.shape;
    }
    if (is_scalar(b)) {
        return a.shape;
    }
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape) + " vs " + shape_string(b.shape));
}

// Elementwise binary op with scalar broadcasting. `fwd(a, b)` computes the
// value, `da(a, b, out)` and `db(a, b, out)` the local partials.
template <class Fwd, class Da, class Db>
Tensor binary_op(const char* op, const Tensor& ta, const Tensor& tb, Fwd fwd, Da da, Db db) {
    const auto& a = checked(ta, op);
    const auto& b = checked(tb, op);
    Shape shape = broadcast_shape(*a, *b, op);
    const std::size_t n = numel(shape);
    const bool sa = a->value.size() == 1 && a->shape != shape;
    const bool sb = b->value.size() == 1 && b->shape != shape;
    Buffer out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = fwd(a->value[sa ? 0 : i], b->value[sb ? 0 : i]);
    }
    auto node = make_result(op, std::move(shape), std::move(out), {a, b});
    if (node->requires_grad) {
        node->backward = [a, b, sa, sb, da, db](detail::Node& self) {
            const std::size_t n = self.value.size();
            if (a->requires_grad) {
                auto& g = a->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = a->value[sa ? 0 : i];
                    const double y = b->value[sb ? 0 : i];
                    g[sa ? 0 : i] += self.grad[i] * da(x, y, self.value[i]);
                }
            }
            if (b->requires_grad) {
                auto& g = b->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = a->value[sa ? 0 : i];
                    const double y = b->value[sb ? 0 : i];
                    g[sb ? 0 : i] += self.grad[i] * db(x, y, self.value[i]);
                }
            }
        };
    }
    return Tensor(node);
}

// Elementwise unary op; `deriv(x, y)` gives dy/dx from input and output.
template <class Fwd, class Deriv>
Tensor unary_op(const char* op, const Tensor& tx, Fwd fwd, Deriv deriv) {
    const auto& x = checked(tx, op);
    Buffer out(x->value.size());
    std::transform(x->value.begin(), x->value.end(), out.begin(), fwd);
    auto node = make_result(op, x->shape, std::move(out), {x});
    if (node->requires_grad) {
        node->backward = [x, deriv](detail::Node& self) {
            auto& g = x->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * deriv(x->value[i], self.value[i]);
            }
        };
    }
    return Tensor(node);
}

double sigmoid_value(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

// ---- shapes ----------------------------------------------------------------

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

Buffer& detail::Node::ensure_grad() {
    if (grad.size() != value.size()) {
        grad.assign(value.size(), 0.0);
    }
    return grad;
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto e : shape) {
        if (e == 0) {
            throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
        }
    }
    if (numel(shape) != values.size()) {
        throw DimensionError("tensor of shape " + shape_string(shape) + " needs " + std::to_string(numel(shape)) +
                             " values, got " + std::to_string(values.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value.assign(values.begin(), values.end());
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const auto n = values.size();
    return from({n}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return checked(*this, "shape")->shape; }
std::size_t Tensor::size() const { return checked(*this, "size")->value.size(); }

std::size_t Tensor::extent(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw BoundsError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
    }
    return s[axis];
}

std::span<const double> Tensor::values() const { return checked(*this, "values")->value; }

std::span<double> Tensor::mutable_values() {
    const auto& n = checked(*this, "mutable_values");
    if (!n->leaf) {
        throw ContractError("mutable_values: only leaf tensors may be written");
    }
    return n->value;
}

std::span<const double> Tensor::grad() const { return checked(*this, "grad")->grad; }

std::span<double> Tensor::mutable_grad() { return checked(*this, "mutable_grad")->ensure_grad(); }

bool Tensor::requires_grad() const { return checked(*this, "requires_grad")->requires_grad; }
bool Tensor::is_leaf() const { return checked(*this, "is_leaf")->leaf; }
const char* Tensor::op_name() const { return checked(*this, "op_name")->op; }

double Tensor::item() const {
    const auto& n = checked(*this, "item");
    if (n->value.size() != 1) {
        throw ContractError("item: tensor of shape " + shape_string(n->shape) + " is not a scalar");
    }
    return n->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const auto& n = checked(*this, "at");
    if (index.size() != n->shape.size()) {
        throw BoundsError("at: index rank " + std::to_string(index.size()) + " vs tensor " + shape_string(n->shape));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= n->shape[axis]) {
            throw BoundsError("at: index out of range for " + shape_string(n->shape));
        }
        flat = flat * n->shape[axis] + i;
        ++axis;
    }
    return n->value[flat];
}

void Tensor::zero_grad() {
    auto& n = checked(*this, "zero_grad");
    std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const {
    const auto& n = checked(*this, "clone");
    auto node = std::make_shared<detail::Node>();
    node->shape = n->shape;
    node->value = n->value;
    node->requires_grad = requires_grad;
    return Tensor(node);
}

// ---- tape ------------------------------------------------------------------

ComputationTape::ComputationTape(const Tensor& root) : root_(checked(root, "backward")) {
    // Iterative post-order DFS; parents always precede children in order_.
    std::unordered_set<const detail::Node*> seen{root_.get()};
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(root_, 0);
    while (!stack.empty()) {
        auto& top = stack.back();
        if (top.second < top.first->parents.size()) {
            NodePtr p = top.first->parents[top.second++];
            if (p->requires_grad && seen.insert(p.get()).second) {
                stack.emplace_back(std::move(p), 0);
            }
        } else {
            order_.push_back(std::move(top.first));
            stack.pop_back();
        }
    }
}

void ComputationTape::run_backward() {
    if (root_->value.size() != 1) {
        throw ContractError("backward: root of shape " + shape_string(root_->shape) + " is not a scalar");
    }
    if (!root_->requires_grad) {
        return;
    }
    for (auto& n : order_) {
        if (!n->leaf) {
            n->grad.assign(n->value.size(), 0.0);
        }
    }
    root_->ensure_grad()[0] += 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        auto& n = **it;
        if (n.backward) {
            n.backward(n);
        }
    }
    // Free interior gradients; leaves keep theirs.
    for (auto& n : order_) {
        if (!n->leaf) {
            Buffer().swap(n->grad);
        }
    }
}

void backward(const Tensor& output) {
    const auto& n = checked(output, "backward");
    if (n->value.size() != 1) {
        throw ContractError("backward: root of shape " + shape_string(n->shape) + " is not a scalar");
    }
    ComputationTape tape(output);
    tape.run_backward();
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& ta, const Tensor& tb) {
    const auto& a = checked(ta, "matmul");
    const auto& b = checked(tb, "matmul");
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0]) {
        throw DimensionError("matmul: cannot multiply " + shape_string(a->shape) + " by " + shape_string(b->shape));
    }
    const auto p = static_cast<Eigen::Index>(a->shape[0]);
    const auto q = static_cast<Eigen::Index>(a->shape[1]);
    const auto r = static_cast<Eigen::Index>(b->shape[1]);
    Buffer out(static_cast<std::size_t>(p * r));
    AlignedMap(out.data(), p, r).noalias() = ConstAlignedMap(a->value.data(), p, q) * ConstAlignedMap(b->value.data(), q, r);
    auto node = make_result("matmul", {a->shape[0], b->shape[1]}, std::move(out), {a, b});
    if (node->requires_grad) {
        node->backward = [a, b, p, q, r](detail::Node& self) {
            ConstAlignedMap dc(self.grad.data(), p, r);
            if (a->requires_grad) {
                AlignedMap(a->ensure_grad().data(), p, q).noalias() += dc * ConstAlignedMap(b->value.data(), q, r).transpose();
            }
            if (b->requires_grad) {
                AlignedMap(b->ensure_grad().data(), q, r).noalias() += ConstAlignedMap(a->value.data(), p, q).transpose() * dc;
            }
        };
    }
    return Tensor(node);
}

Tensor transpose(const Tensor& ta) {
    const auto& a = checked(ta, "transpose");
    if (a->shape.size() != 2) {
        throw DimensionError("transpose: expected a matrix, got " + shape_string(a->shape));
    }
    const auto p = static_cast<Eigen::Index>(a->shape[0]);
    const auto q = static_cast<Eigen::Index>(a->shape[1]);
    Buffer out(a->value.size());
    MatrixMap(out.data(), q, p) = ConstMatrixMap(a->value.data(), p, q).transpose();
    auto node = make_result("transpose", {a->shape[1], a->shape[0]}, std::move(out), {a});
    if (node->requires_grad) {
        node->backward = [a, p, q](detail::Node& self) {
            MatrixMap(a->ensure_grad().data(), p, q) += ConstMatrixMap(self.grad.data(), q, p).transpose();
        };
    }
    return Tensor(node);
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double out) { return -out / y; });
}

double selu_value(double x) { return x >= 0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * (std::exp(x) - 1.0); }

Tensor sigmoid(const Tensor& x) {
    return unary_op("sigmoid", x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
    return unary_op(
        "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor selu(const Tensor& x) {
    return unary_op("selu", x, selu_value, [](double v, double y) {
        return v >= 0 ? kSeluLambda : y + kSeluLambda * kSeluAlpha;
    });
}

Tensor abs(const Tensor& x) {
    return unary_op(
        "abs", x, [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor neg(const Tensor& x) {
    return unary_op(
        "neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor clamp_min(const Tensor& x, double floor) {
    return unary_op(
        "clamp_min", x, [floor](double v) { return std::max(v, floor); },
        [floor](double v, double) { return v > floor ? 1.0 : 0.0; });
}

Tensor scale(const Tensor& x, double factor) {
    return unary_op(
        "scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor shift(const Tensor& x, double offset) {
    return unary_op(
        "shift", x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

// ---- reductions and layout -------------------------------------------------

Tensor sum(const Tensor& tx) {
    const auto& x = checked(tx, "sum");
    const double s = std::accumulate(x->value.begin(), x->value.end(), 0.0);
    auto node = make_result("sum", {}, {s}, {x});
    if (node->requires_grad) {
        node->backward = [x](detail::Node& self) {
            for (auto& g : x->ensure_grad()) {
                g += self.grad[0];
            }
        };
    }
    return Tensor(node);
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor reshape(const Tensor& tx, Shape shape) {
    const auto& x = checked(tx, "reshape");
    if (numel(shape) != x->value.size()) {
        throw DimensionError("reshape: cannot view " + shape_string(x->shape) + " as " + shape_string(shape));
    }
    auto node = make_result("reshape", std::move(shape), x->value, {x});
    if (node->requires_grad) {
        node->backward = [x](detail::Node& self) { accumulate(*x, self.grad); };
    }
    return Tensor(node);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) {
        throw ContractError("concat: no parts");
    }
    std::vector<NodePtr> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) {
        nodes.push_back(checked(p, "concat"));
    }
    const Shape& first = nodes.front()->shape;
    if (axis >= first.size()) {
        throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_string(first));
    }
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& n : nodes) {
        if (n->shape.size() != first.size()) {
            throw DimensionError("concat: rank mismatch " + shape_string(first) + " vs " + shape_string(n->shape));
        }
        for (std::size_t d = 0; d < first.size(); ++d) {
            if (d != axis && n->shape[d] != first[d]) {
                throw DimensionError("concat: side extents differ " + shape_string(first) + " vs " +
                                     shape_string(n->shape));
            }
        }
        out_shape[axis] += n->shape[axis];
    }
    // outer × (axis extent × inner) blocks
    std::size_t outer = 1;
    for (std::size_t d = 0; d < axis; ++d) {
        outer *= first[d];
    }
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < first.size(); ++d) {
        inner *= first[d];
    }
    const std::size_t row = out_shape[axis] * inner;
    Buffer out(numel(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& n : nodes) {
        offsets.push_back(off);
        const std::size_t block = n->shape[axis] * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(n->value.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                        out.begin() + static_cast<std::ptrdiff_t>(o * row + off));
        }
        off += block;
    }
    auto node = make_result("concat", std::move(out_shape), std::move(out), nodes);
    if (node->requires_grad) {
        node->backward = [nodes, offsets, outer, inner, row, axis](detail::Node& self) {
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                auto& n = *nodes[k];
                if (!n.requires_grad) {
                    continue;
                }
                auto& g = n.ensure_grad();
                const std::size_t block = n.shape[axis] * inner;
                for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t i = 0; i < block; ++i) {
                        g[o * block + i] += self.grad[o * row + offsets[k] + i];
                    }
                }
            }
        };
    }
    return Tensor(node);
}

Tensor slice_rows(const Tensor& tx, std::size_t begin, std::size_t end) {
    const auto& x = checked(tx, "slice_rows");
    if (x->shape.empty() || begin >= end || end > x->shape[0]) {
        throw BoundsError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                          ") invalid for " + shape_string(x->shape));
    }
    const std::size_t inner = x->value.size() / x->shape[0];
    Shape shape = x->shape;
    shape[0] = end - begin;
    Buffer out(x->value.begin() + static_cast<std::ptrdiff_t>(begin * inner),
                            x->value.begin() + static_cast<std::ptrdiff_t>(end * inner));
    auto node = make_result("slice_rows", std::move(shape), std::move(out), {x});
    if (node->requires_grad) {
        node->backward = [x, begin, inner](detail::Node& self) {
            auto& g = x->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[begin * inner + i] += self.grad[i];
            }
        };
    }
    return Tensor(node);
}

Tensor bias_add(const Tensor& tx, const Tensor& tb) {
    const auto& x = checked(tx, "bias_add");
    const auto& b = checked(tb, "bias_add");
    if (x->shape.size() != 2 || b->shape.size() != 1 || b->shape[0] != x->shape[1]) {
        throw DimensionError("bias_add: bias " + shape_string(b->shape) + " does not fit rows of " +
                             shape_string(x->shape));
    }
    const std::size_t rows = x->shape[0];
    const std::size_t cols = x->shape[1];
    Buffer out(x->value);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[i * cols + j] += b->value[j];
        }
    }
    auto node = make_result("bias_add", x->shape, std::move(out), {x, b});
    if (node->requires_grad) {
        node->backward = [x, b, rows, cols](detail::Node& self) {
            accumulate(*x, self.grad);
            if (b->requires_grad) {
                auto& g = b->ensure_grad();
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < cols; ++j) {
                        g[j] += self.grad[i * cols + j];
                    }
                }
            }
        };
    }
    return Tensor(node);
}

Tensor gather_rows(const Tensor& ttable, std::span<const std::size_t> ids) {
    const auto& table = checked(ttable, "gather_rows");
    if (table->shape.size() != 2) {
        throw DimensionError("gather_rows: table must be a matrix, got " + shape_string(table->shape));
    }
    if (ids.empty()) {
        throw ContractError("gather_rows: no ids");
    }
    const std::size_t vocab = table->shape[0];
    const std::size_t dim = table->shape[1];
    Buffer out(ids.size() * dim);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vocab) {
            throw BoundsError("gather_rows: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                              std::to_string(vocab));
        }
        std::copy_n(table->value.begin() + static_cast<std::ptrdiff_t>(ids[i] * dim), dim,
                    out.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    auto node = make_result("gather_rows", {ids.size(), dim}, std::move(out), {table});
    if (node->requires_grad) {
        std::vector<std::size_t> keep(ids.begin(), ids.end());
        node->backward = [table, keep, dim](detail::Node& self) {
            auto& g = table->ensure_grad();
            for (std::size_t i = 0; i < keep.size(); ++i) {
                for (std::size_t d = 0; d < dim; ++d) {
                    g[keep[i] * dim + d] += self.grad[i * dim + d];
                }
            }
        };
    }
    return Tensor(node);
}

// ---- convolution -----------------------------------------------------------

Tensor conv2d(const Tensor& tinput, const Tensor& tkernels, const Tensor& tbias, Padding padding) {
    const auto& in = checked(tinput, "conv2d");
    const auto& ker = checked(tkernels, "conv2d");
    const auto& bias = checked(tbias, "conv2d");
    const bool batched = in->shape.size() == 4;
    if (!(in->shape.size() == 3 || batched) || ker->shape.size() != 4) {
        throw DimensionError("conv2d: input " + shape_string(in->shape) + " or kernels " + shape_string(ker->shape) +
                             " has the wrong rank");
    }
    const std::size_t batch = batched ? in->shape[0] : 1;
    const std::size_t height = in->shape[batched ? 1 : 0];
    const std::size_t width = in->shape[batched ? 2 : 1];
    const std::size_t c_in = in->shape[batched ? 3 : 2];
    const std::size_t k = ker->shape[0];
    const std::size_t c_out = ker->shape[3];
    if (ker->shape[1] != k || ker->shape[2] != c_in) {
        throw DimensionError("conv2d: kernels " + shape_string(ker->shape) + " do not match input " +
                             shape_string(in->shape));
    }
    if (bias->shape.size() != 1 || bias->shape[0] != c_out) {
        throw DimensionError("conv2d: bias " + shape_string(bias->shape) + " does not match " + std::to_string(c_out) +
                             " output channels");
    }
    const std::size_t pad_lo = padding == Padding::same ? (k - 1) / 2 : 0;
    const std::size_t pad_hi = padding == Padding::same ? k - 1 - pad_lo : 0;
    if (k > height + pad_lo + pad_hi || k > width + pad_lo + pad_hi) {
        throw DimensionError("conv2d: kernel " + std::to_string(k) + "x" + std::to_string(k) +
                             " larger than padded input " + shape_string(in->shape));
    }
    const std::size_t out_h = height + pad_lo + pad_hi - k + 1;
    const std::size_t out_w = width + pad_lo + pad_hi - k + 1;
    const std::size_t patch = k * k * c_in;
    const std::size_t positions = batch * out_h * out_w;

    // im2col: one row per output position, columns ordered (dy, dx, c) to match
    // the k×k×C_in×C_out kernel layout read as a (k·k·C_in)×C_out matrix.
    Buffer cols(positions * patch, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* src = in->value.data() + b * height * width * c_in;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                double* dst = cols.data() + ((b * out_h + oy) * out_w + ox) * patch;
                for (std::size_t dy = 0; dy < k; ++dy) {
                    const auto y = static_cast<std::ptrdiff_t>(oy + dy) - static_cast<std::ptrdiff_t>(pad_lo);
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(height)) {
                        continue;
                    }
                    for (std::size_t dx = 0; dx < k; ++dx) {
                        const auto x = static_cast<std::ptrdiff_t>(ox + dx) - static_cast<std::ptrdiff_t>(pad_lo);
                        if (x < 0 || x >= static_cast<std::ptrdiff_t>(width)) {
                            continue;
                        }
                        std::copy_n(src + (static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)) * c_in,
                                    c_in, dst + (dy * k + dx) * c_in);
                    }
                }
            }
        }
    }
    const auto P = static_cast<Eigen::Index>(positions);
    const auto Q = static_cast<Eigen::Index>(patch);
    const auto R = static_cast<Eigen::Index>(c_out);
    Buffer out(positions * c_out);
    AlignedMap(out.data(), P, R).noalias() = ConstAlignedMap(cols.data(), P, Q) * ConstAlignedMap(ker->value.data(), Q, R);
    for (std::size_t i = 0; i < positions; ++i) {
        for (std::size_t j = 0; j < c_out; ++j) {
            out[i * c_out + j] += bias->value[j];
        }
    }

    Shape shape = batched ? Shape{batch, out_h, out_w, c_out} : Shape{out_h, out_w, c_out};
    auto node = make_result("conv2d", std::move(shape), std::move(out), {in, ker, bias});
    if (node->requires_grad) {
        node->backward = [in, ker, bias, cols = std::move(cols), P, Q, R, batch, height, width, c_in, k, out_h, out_w,
                          pad_lo](detail::Node& self) {
            ConstAlignedMap dout(self.grad.data(), P, R);
            if (ker->requires_grad) {
                AlignedMap(ker->ensure_grad().data(), Q, R).noalias() += ConstAlignedMap(cols.data(), P, Q).transpose() * dout;
            }
            if (bias->requires_grad) {
                auto& g = bias->ensure_grad();
                for (Eigen::Index i = 0; i < P; ++i) {
                    for (Eigen::Index j = 0; j < R; ++j) {
                        g[static_cast<std::size_t>(j)] += dout(i, j);
                    }
                }
            }
            if (in->requires_grad) {
                RowMatrix dcols = dout * ConstAlignedMap(ker->value.data(), Q, R).transpose();
                auto& g = in->ensure_grad();
                for (std::size_t b = 0; b < batch; ++b) {
                    double* dst = g.data() + b * height * width * c_in;
                    for (std::size_t oy = 0; oy < out_h; ++oy) {
                        for (std::size_t ox = 0; ox < out_w; ++ox) {
                            const double* src = dcols.data() + ((b * out_h + oy) * out_w + ox) * Q;
                            for (std::size_t dy = 0; dy < k; ++dy) {
                                const auto y = static_cast<std::ptrdiff_t>(oy + dy) - static_cast<std::ptrdiff_t>(pad_lo);
                                if (y < 0 || y >= static_cast<std::ptrdiff_t>(height)) {
                                    continue;
                                }
                                for (std::size_t dx = 0; dx < k; ++dx) {
                                    const auto x =
                                        static_cast<std::ptrdiff_t>(ox + dx) - static_cast<std::ptrdiff_t>(pad_lo);
                                    if (x < 0 || x >= static_cast<std::ptrdiff_t>(width)) {
                                        continue;
                                    }
                                    double* d = dst + (static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)) * c_in;
                                    const double* s = src + (dy * k + dx) * c_in;
                                    for (std::size_t c = 0; c < c_in; ++c) {
                                        d[c] += s[c];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return Tensor(node);
}

Tensor slice_spot(const Tensor& tgrid, std::size_t row, std::size_t col) {
    const auto& grid = checked(tgrid, "slice_spot");
    const bool stacked = grid->shape.size() == 4;
    if (!(grid->shape.size() == 3 || stacked)) {
        throw DimensionError("slice_spot: expected M×N×β or T×M×N×β, got " + shape_string(grid->shape));
    }
    const std::size_t frames = stacked ? grid->shape[0] : 1;
    const std::size_t rows = grid->shape[stacked ? 1 : 0];
    const std::size_t cols = grid->shape[stacked ? 2 : 1];
    const std::size_t depth = grid->shape[stacked ? 3 : 2];
    if (row >= rows || col >= cols) {
        throw BoundsError("slice_spot: cell (" + std::to_string(row) + ", " + std::to_string(col) + ") outside " +
                          std::to_string(rows) + "x" + std::to_string(cols) + " grid");
    }
    const std::size_t frame_size = rows * cols * depth;
    const std::size_t offset = (row * cols + col) * depth;
    Buffer out(frames * depth);
    for (std::size_t t = 0; t < frames; ++t) {
        std::copy_n(grid->value.begin() + static_cast<std::ptrdiff_t>(t * frame_size + offset), depth,
                    out.begin() + static_cast<std::ptrdiff_t>(t * depth));
    }
    Shape shape = stacked ? Shape{frames, depth} : Shape{depth};
    auto node = make_result("slice_spot", std::move(shape), std::move(out), {grid});
    if (node->requires_grad) {
        node->backward = [grid, frames, frame_size, offset, depth](detail::Node& self) {
            auto& g = grid->ensure_grad();
            for (std::size_t t = 0; t < frames; ++t) {
                for (std::size_t c = 0; c < depth; ++c) {
                    g[t * frame_size + offset + c] += self.grad[t * depth + c];
                }
            }
        };
    }
    return Tensor(node);
}

// ---- finite differences ----------------------------------------------------

std::vector<double> numeric_gradient(const ScalarFunction& f, const Tensor& x, double h) {
    Tensor probe = x.clone(false);
    auto values = probe.mutable_values();
    std::vector<double> out(values.size());
    auto eval = [&](std::size_t i, double v) {
        const double saved = values[i];
        values[i] = v;
        const double y = f(probe).item();
        values[i] = saved;
        return y;
    };
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double x0 = values[i];
        const double step = h * std::max(1.0, std::fabs(x0));
        const double f1 = eval(i, x0 + step);
        const double fm1 = eval(i, x0 - step);
        const double f2 = eval(i, x0 + 2 * step);
        const double fm2 = eval(i, x0 - 2 * step);
        out[i] = (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * step);
    }
    return out;
}

double grad_check(const ScalarFunction& f, const Tensor& x, double h) {
    Tensor leaf = x.clone(true);
    Tensor y = f(leaf);
    backward(y);
    std::vector<double> analytic(leaf.size(), 0.0);
    if (!leaf.grad().empty()) {
        std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    }
    const auto numeric = numeric_gradient(f, x, h);
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), 1e-8});
        worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

double grad_check_in_place(const std::function<Tensor()>& loss, Tensor param, double h) {
    if (!param.requires_grad() || !param.is_leaf()) {
        throw ContractError("grad_check_in_place: parameter must be a requires_grad leaf");
    }
    param.zero_grad();
    backward(loss());
    std::vector<double> analytic(param.size(), 0.0);
    if (!param.grad().empty()) {
        std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
    }
    param.zero_grad();
    auto values = param.mutable_values();
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double x0 = values[i];
        const double step = h * std::max(1.0, std::fabs(x0));
        auto eval = [&](double v) {
            values[i] = v;
            const double y = loss().item();
            values[i] = x0;
            return y;
        };
        const double numeric = (8.0 * (eval(x0 + step) - eval(x0 - step)) - (eval(x0 + 2 * step) - eval(x0 - 2 * step))) /
                               (12.0 * step);
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
        worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
    }
    return worst;
}

} // namespace distnet
