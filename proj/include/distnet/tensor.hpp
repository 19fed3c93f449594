#pragma once

// Dense row-major tensors of doubles with reverse-mode automatic
// differentiation. Every op builds a node holding its value and a closure that
// pushes the node's gradient into its parents; backward() orders the graph
// reachable from a scalar root and runs those closures in reverse.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace distnet {

using Shape = std::vector<std::size_t>;

/// Allocator returning 64-byte aligned blocks. Vectorized kernels pick their
/// summation order from operand alignment, so uniformly aligned storage makes
/// every result depend on the values alone and runs bit-reproducible.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

    friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    Buffer value;
    Buffer grad; // empty until first accumulation
    bool requires_grad = false;
    bool leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Buffer& ensure_grad();
};

} // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    std::size_t extent(std::size_t axis) const;

    std::span<const double> values() const;
    /// Leaves only: the optimizer and initializers write through this.
    std::span<double> mutable_values();
    /// Empty span when no gradient has been accumulated yet.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();

    bool requires_grad() const;
    bool is_leaf() const;
    const char* op_name() const;

    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    void zero_grad();
    /// Same values, cut from the graph.
    Tensor detach() const;
    /// Deep copy as a fresh leaf.
    Tensor clone(bool requires_grad) const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered record of the nodes reachable from a root.
class ComputationTape {
public:
    explicit ComputationTape(const Tensor& root);

    std::size_t size() const { return order_.size(); }
    const std::vector<std::shared_ptr<detail::Node>>& nodes() const { return order_; }
    /// Seeds d(root)/d(root) = 1 and walks the tape backwards. Leaf gradients
    /// accumulate across calls; interior gradients are reset each run.
    void run_backward();

private:
    std::shared_ptr<detail::Node> root_;
    std::vector<std::shared_ptr<detail::Node>> order_;
};

/// Populates gradients of every requires_grad leaf reachable from `output`.
/// Throws ContractError unless `output` holds exactly one element.
void backward(const Tensor& output);

// ---- primitive ops ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Elementwise binary ops. Shapes must match exactly unless one side is a
/// rank-0 scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor selu(const Tensor& x);
/// Subgradient 0 at x == 0.
Tensor abs(const Tensor& x);
Tensor neg(const Tensor& x);
/// max(x, floor); gradient passes only where x > floor.
Tensor clamp_min(const Tensor& x, double floor);

Tensor scale(const Tensor& x, double factor);
Tensor shift(const Tensor& x, double offset);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Rows [begin, end) along axis 0.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
/// Adds `bias` (length = last extent of a rank-2 `x`) to every row.
Tensor bias_add(const Tensor& x, const Tensor& bias);
/// Rows of a rank-2 table selected by id.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);

enum class Padding { same, valid };

/// Stride-1 cross-correlation. `input` is H×W×C_in or B×H×W×C_in, `kernels`
/// k×k×C_in×C_out, `bias` C_out.
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, Padding padding);

/// β-vector at (row, col) of an M×N×β grid, or T×β from a T×M×N×β stack.
Tensor slice_spot(const Tensor& grid, std::size_t row, std::size_t col);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return shift(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

inline constexpr double kSeluAlpha = 1.67326;
inline constexpr double kSeluLambda = 1.0507;

double selu_value(double x);

// ---- finite-difference oracle ----------------------------------------------

using ScalarFunction = std::function<Tensor(const Tensor&)>;

/// Max over components of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
/// numeric from a fourth-order central difference with step h·max(1, |x_i|).
double grad_check(const ScalarFunction& f, const Tensor& x, double h = 1e-4);

/// Same metric for a leaf already wired into a larger computation: the
/// analytic gradient comes from backward(loss()), the numeric one from
/// perturbing `param` in place. Clears param's gradient before and after.
double grad_check_in_place(const std::function<Tensor()>& loss, Tensor param, double h = 1e-4);

/// Numeric gradient used by grad_check, exposed for tests.
std::vector<double> numeric_gradient(const ScalarFunction& f, const Tensor& x, double h = 1e-4);

} // namespace distnet
