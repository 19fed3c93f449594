#include "distnet/errors.hpp"
#include "distnet/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace distnet;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool rg = false) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v) {
        x = u(rng);
    }
    return Tensor::from(std::move(shape), std::move(v), rg);
}

// Values away from the abs/selu kink at 0.
Tensor random_away_from_zero(Shape shape, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(1e-3, 2.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(numel(shape));
    for (auto& x : v) {
        x = sign(rng) ? u(rng) : -u(rng);
    }
    return Tensor::from(std::move(shape), std::move(v));
}

// Direct-summation cross-correlation used as the oracle for conv2d.
std::vector<double> brute_conv(const Tensor& in, const Tensor& ker, const Tensor& bias, Padding pad) {
    const auto H = in.extent(0), W = in.extent(1), C = in.extent(2);
    const auto k = ker.extent(0), O = ker.extent(3);
    const long lo = pad == Padding::same ? static_cast<long>((k - 1) / 2) : 0;
    const auto oh = pad == Padding::same ? H : H - k + 1;
    const auto ow = pad == Padding::same ? W : W - k + 1;
    std::vector<double> out(oh * ow * O);
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x)
            for (std::size_t o = 0; o < O; ++o) {
                double acc = bias.values()[o];
                for (std::size_t dy = 0; dy < k; ++dy)
                    for (std::size_t dx = 0; dx < k; ++dx) {
                        const long iy = static_cast<long>(y + dy) - lo;
                        const long ix = static_cast<long>(x + dx) - lo;
                        if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                        for (std::size_t c = 0; c < C; ++c)
                            acc += in.at({static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), c}) *
                                   ker.at({dy, dx, c, o});
                    }
                out[(y * ow + x) * O + o] = acc;
            }
    return out;
}

} // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from({2, 2}, {5, 6, 7, 8});
    auto c = matmul(eye, m);
    EXPECT_EQ(c.shape(), (Shape{2, 2}));
    EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()), (std::vector<double>{5, 6, 7, 8}));
}

TEST(Matmul, RowTimesColumn) {
    auto c = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
    EXPECT_EQ(c.shape(), (Shape{1, 1}));
    EXPECT_DOUBLE_EQ(c.item(), 11.0);
}

TEST(Matmul, ZeroAnnihilates) {
    std::mt19937_64 rng(1);
    auto c = matmul(Tensor::zeros({2, 3}), random_tensor({3, 4}, rng));
    EXPECT_EQ(c.shape(), (Shape{2, 4}));
    for (double v : c.values()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL();
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    }
}

TEST(Matmul, BackwardMatchesTransposeFormulas) {
    std::mt19937_64 rng(2);
    auto a = random_tensor({3, 4}, rng, -1, 1, true);
    auto b = random_tensor({4, 2}, rng, -1, 1, true);
    auto w = random_tensor({3, 2}, rng);
    backward(sum(mul(matmul(a, b), w)));
    // dA = W·Bᵀ, dB = Aᵀ·W
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double e = 0;
            for (std::size_t r = 0; r < 2; ++r) e += w.at({i, r}) * b.at({j, r});
            EXPECT_NEAR(a.grad()[i * 4 + j], e, 1e-14);
        }
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t r = 0; r < 2; ++r) {
            double e = 0;
            for (std::size_t i = 0; i < 3; ++i) e += a.at({i, j}) * w.at({i, r});
            EXPECT_NEAR(b.grad()[j * 2 + r], e, 1e-14);
        }
}

TEST(Conv2d, UnitKernelIsIdentityBitForBit) {
    std::mt19937_64 rng(3);
    auto in = random_tensor({5, 4, 3}, rng);
    std::vector<double> k(9, 0.0);
    for (std::size_t c = 0; c < 3; ++c) k[c * 3 + c] = 1.0;
    auto out = conv2d(in, Tensor::from({1, 1, 3, 3}, k), Tensor::zeros({3}), Padding::same);
    ASSERT_EQ(out.shape(), in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) EXPECT_EQ(out.values()[i], in.values()[i]);
}

TEST(Conv2d, ValidAllOnesWindowSums) {
    auto out = conv2d(Tensor::full({3, 3, 1}, 1.0), Tensor::full({2, 2, 1, 1}, 1.0), Tensor::zeros({1}), Padding::valid);
    ASSERT_EQ(out.shape(), (Shape{2, 2, 1}));
    for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 4.0);
}

TEST(Conv2d, ZeroKernelsGiveBiasField) {
    std::mt19937_64 rng(4);
    auto out = conv2d(random_tensor({4, 5, 2}, rng), Tensor::zeros({3, 3, 2, 2}), Tensor::vector({2.5, 2.5}),
                      Padding::same);
    for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(Conv2d, MatchesDirectSummation) {
    std::mt19937_64 rng(5);
    for (auto pad : {Padding::same, Padding::valid}) {
        auto in = random_tensor({5, 6, 3}, rng);
        auto ker = random_tensor({3, 3, 3, 4}, rng);
        auto bias = random_tensor({4}, rng);
        auto out = conv2d(in, ker, bias, pad);
        auto expected = brute_conv(in, ker, bias, pad);
        ASSERT_EQ(out.size(), expected.size());
        for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(out.values()[i], expected[i], 1e-13);
    }
}

TEST(Conv2d, BatchedEqualsPerFrame) {
    std::mt19937_64 rng(6);
    auto frames = random_tensor({3, 4, 4, 2}, rng);
    auto ker = random_tensor({3, 3, 2, 3}, rng);
    auto bias = random_tensor({3}, rng);
    auto out = conv2d(frames, ker, bias, Padding::same);
    for (std::size_t t = 0; t < 3; ++t) {
        auto frame = reshape(slice_rows(frames, t, t + 1), {4, 4, 2});
        auto single = conv2d(frame, ker, bias, Padding::same);
        for (std::size_t i = 0; i < single.size(); ++i)
            EXPECT_DOUBLE_EQ(out.values()[t * single.size() + i], single.values()[i]);
    }
}

TEST(Conv2d, KernelLargerThanInputRejected) {
    EXPECT_THROW(conv2d(Tensor::zeros({2, 2, 1}), Tensor::zeros({3, 3, 1, 1}), Tensor::zeros({1}), Padding::valid),
                 DimensionError);
}

TEST(Conv2d, GradientsPassFiniteDifferences) {
    std::mt19937_64 rng(7);
    auto in = random_tensor({4, 5, 2}, rng);
    auto ker = random_tensor({3, 3, 2, 3}, rng);
    auto bias = random_tensor({3}, rng);
    auto weights = random_tensor({4, 5, 3}, rng);
    EXPECT_LT(grad_check([&](const Tensor& x) { return sum(mul(conv2d(x, ker, bias, Padding::same), weights)); }, in),
              1e-4);
    EXPECT_LT(grad_check([&](const Tensor& k) { return sum(mul(conv2d(in, k, bias, Padding::same), weights)); }, ker),
              1e-4);
    EXPECT_LT(grad_check([&](const Tensor& b) { return sum(mul(conv2d(in, ker, b, Padding::same), weights)); }, bias),
              1e-4);
}

TEST(Elementwise, SeluValues) {
    EXPECT_DOUBLE_EQ(selu(Tensor::scalar(0.0)).item(), 0.0);
    EXPECT_DOUBLE_EQ(selu(Tensor::scalar(1.0)).item(), 1.0507);
    EXPECT_NEAR(selu(Tensor::scalar(-1.0)).item(), -1.11133, 1e-4);
}

TEST(Elementwise, ShapeMismatchRejected) {
    EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
    EXPECT_THROW(mul(Tensor::zeros({1}), Tensor::zeros({3})), DimensionError);
}

TEST(Elementwise, ScalarBroadcasts) {
    auto y = mul(Tensor::scalar(2.0), Tensor::vector({1, 2, 3}));
    EXPECT_EQ(y.shape(), (Shape{3}));
    EXPECT_DOUBLE_EQ(y.values()[2], 6.0);
}

TEST(Elementwise, AbsSubgradientAtZero) {
    auto x = Tensor::vector({0.0, 2.0, -3.0}, true);
    backward(sum(abs(x)));
    EXPECT_EQ(x.grad()[0], 0.0);
    EXPECT_EQ(x.grad()[1], 1.0);
    EXPECT_EQ(x.grad()[2], -1.0);
}

TEST(Elementwise, NonFiniteSurfaced) {
    EXPECT_THROW(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), NumericError);
}

TEST(Concat, VectorsJoinAlongAxis0) {
    auto beta = Tensor::vector(std::vector<double>(32, 1.0));
    auto gamma = Tensor::vector(std::vector<double>(9, 2.0));
    EXPECT_EQ(concat({beta, gamma}, 0).shape(), (Shape{41}));
    auto one = Tensor::vector({4, 5});
    auto same = concat({one}, 0);
    EXPECT_EQ(std::vector<double>(same.values().begin(), same.values().end()), (std::vector<double>{4, 5}));
    auto c = concat({Tensor::zeros({2}), Tensor::full({3}, 1.0)}, 0);
    EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()), (std::vector<double>{0, 0, 1, 1, 1}));
}

TEST(Concat, MismatchedSideExtentsRejected) {
    EXPECT_THROW(concat({Tensor::zeros({2, 3}), Tensor::zeros({3, 2})}, 1), DimensionError);
}

TEST(Concat, ThenSliceRecoversParts) {
    std::mt19937_64 rng(8);
    auto a = random_tensor({2, 3}, rng);
    auto b = random_tensor({4, 3}, rng);
    auto c = concat({a, b}, 0);
    auto ra = slice_rows(c, 0, 2);
    auto rb = slice_rows(c, 2, 6);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(ra.values()[i], a.values()[i]);
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(rb.values()[i], b.values()[i]);
    // along a non-leading axis: transpose, slice, transpose back
    auto d = concat({transpose(a), transpose(b)}, 1);
    auto back = transpose(slice_rows(transpose(d), 2, 6));
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(transpose(back).values()[i], b.values()[i]);
}

TEST(Concat, GradientSlicesBack) {
    std::mt19937_64 rng(9);
    auto a = random_tensor({3, 2}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto w = random_tensor({3, 6}, rng);
    EXPECT_LT(grad_check([&](const Tensor& x) { return sum(mul(concat({x, b}, 1), w)); }, a), 1e-4);
    EXPECT_LT(grad_check([&](const Tensor& x) { return sum(mul(concat({a, x}, 1), w)); }, b), 1e-4);
}

TEST(SliceSpot, ReadsCell) {
    auto constant = Tensor::full({4, 5, 3}, 7.0);
    auto spot_of_constant = slice_spot(constant, 1, 1);
    for (double v : spot_of_constant.values()) EXPECT_EQ(v, 7.0);
    auto grid = Tensor::zeros({4, 5, 3});
    std::vector<double> v(grid.values().begin(), grid.values().end());
    for (std::size_t c = 0; c < 3; ++c) v[(2 * 5 + 3) * 3 + c] = static_cast<double>(c + 1);
    auto spot = slice_spot(Tensor::from({4, 5, 3}, v), 2, 3);
    EXPECT_EQ(std::vector<double>(spot.values().begin(), spot.values().end()), (std::vector<double>{1, 2, 3}));
}

TEST(SliceSpot, GradientScattersToCell) {
    std::mt19937_64 rng(10);
    auto grid = random_tensor({4, 5, 3}, rng, -1, 1, true);
    backward(sum(slice_spot(grid, 2, 3)));
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 5; ++c)
            for (std::size_t k = 0; k < 3; ++k)
                EXPECT_EQ(grid.grad()[(r * 5 + c) * 3 + k], (r == 2 && c == 3) ? 1.0 : 0.0);
    auto numeric = numeric_gradient([](const Tensor& g) { return sum(slice_spot(g, 2, 3)); }, grid);
    for (std::size_t i = 0; i < numeric.size(); ++i) EXPECT_NEAR(numeric[i], grid.grad()[i], 1e-10);
}

TEST(SliceSpot, OutOfRangeRejected) {
    EXPECT_THROW(slice_spot(Tensor::zeros({2, 2, 1}), 2, 0), BoundsError);
}

TEST(Backward, SumOfSquares) {
    auto x = Tensor::vector({1.0, -2.0, 3.5}, true);
    backward(sum(mul(x, x)));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x.values()[i]);
}

TEST(Backward, ConstantGraphHasZeroGradient) {
    auto x = Tensor::vector({1.0, 2.0}, true);
    backward(sum(add(mul(x, Tensor::scalar(0.0)), Tensor::scalar(3.0))));
    for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RepeatedCallsAccumulate) {
    auto x = Tensor::vector({1.5}, true);
    auto y = sum(mul(x, x));
    backward(y);
    backward(y);
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
    x.zero_grad();
    backward(y);
    EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

TEST(Backward, NonScalarRootRejected) {
    auto x = Tensor::vector({1.0, 2.0}, true);
    EXPECT_THROW(backward(mul(x, x)), ContractError);
}

TEST(Backward, ChainMatchesFiniteDifference) {
    std::mt19937_64 rng(11);
    auto w = random_tensor({3, 3}, rng);
    auto f = [&](const Tensor& x) {
        auto h = tanh(matmul(x, w));
        auto z = sigmoid(h) * selu(h + 0.3);
        return mean(z / (abs(h) + 1.0));
    };
    EXPECT_LT(grad_check(f, random_tensor({2, 3}, rng)), 1e-4);
}

TEST(Backward, TapeIsTopologicallyOrdered) {
    auto x = Tensor::vector({1.0, 2.0}, true);
    auto a = x * 2.0;
    auto b = tanh(a);
    auto y = sum(a + b);
    ComputationTape tape(y);
    std::vector<const detail::Node*> seen;
    for (const auto& n : tape.nodes()) {
        for (const auto& p : n->parents) {
            if (!p->requires_grad) continue;
            EXPECT_NE(std::find(seen.begin(), seen.end(), p.get()), seen.end());
        }
        seen.push_back(n.get());
    }
    EXPECT_EQ(tape.nodes().back().get(), y.node().get());
}

TEST(GradCheck, LinearFunctionNearMachineEpsilon) {
    auto f = [](const Tensor& x) { return sum(x * 3.0 + 1.0); };
    EXPECT_LT(grad_check(f, Tensor::vector({0.2, -1.0, 4.0})), 1e-9);
}

TEST(GradCheck, SeluAtHalf) {
    EXPECT_LT(grad_check([](const Tensor& x) { return sum(selu(x)); }, Tensor::vector({0.5})), 1e-6);
}

// Every primitive at 100 random points, away from the kinks of abs/selu.
TEST(GradCheck, EveryPrimitiveAtRandomPoints) {
    std::mt19937_64 rng(12);
    const std::vector<std::pair<const char*, ScalarFunction>> unary = {
        {"sigmoid", [](const Tensor& x) { return sum(sigmoid(x)); }},
        {"tanh", [](const Tensor& x) { return sum(tanh(x)); }},
        {"selu", [](const Tensor& x) { return sum(selu(x)); }},
        {"abs", [](const Tensor& x) { return sum(abs(x)); }},
        {"neg", [](const Tensor& x) { return sum(neg(x)); }},
        {"scale", [](const Tensor& x) { return sum(scale(x, -2.5)); }},
    };
    for (const auto& [name, f] : unary) {
        auto x = random_away_from_zero({100}, rng);
        EXPECT_LT(grad_check(f, x), 1e-4) << name;
    }
    auto other = random_away_from_zero({100}, rng);
    const std::vector<std::pair<const char*, ScalarFunction>> binary = {
        {"add", [&](const Tensor& x) { return sum(add(x, other) * other); }},
        {"sub", [&](const Tensor& x) { return sum(sub(other, x) * other); }},
        {"mul", [&](const Tensor& x) { return sum(mul(x, other)); }},
        {"div-num", [&](const Tensor& x) { return sum(div(x, other)); }},
        {"div-den", [&](const Tensor& x) { return sum(div(other, abs(x) + 1.0)); }},
    };
    for (const auto& [name, f] : binary) {
        auto x = random_away_from_zero({100}, rng);
        EXPECT_LT(grad_check(f, x), 1e-4) << name;
    }
    auto table = random_tensor({7, 3}, rng);
    std::vector<std::size_t> ids{1, 4, 4, 6};
    auto weights = random_tensor({4, 3}, rng);
    EXPECT_LT(grad_check([&](const Tensor& t) { return sum(mul(gather_rows(t, ids), weights)); }, table), 1e-4);
    auto bias = random_tensor({3}, rng);
    EXPECT_LT(grad_check([&](const Tensor& b) { return sum(mul(bias_add(weights, b), weights)); }, bias), 1e-4);
    EXPECT_LT(grad_check([&](const Tensor& x) { return sum(mul(transpose(x), transpose(weights))); }, weights), 1e-4);
}

TEST(Backward, LinearInFunction) {
    std::mt19937_64 rng(13);
    auto x0 = random_tensor({5}, rng);
    auto f = [](const Tensor& x) { return sum(tanh(x) * x); };
    auto g = [](const Tensor& x) { return sum(sigmoid(x * 2.0)); };
    const double a = 1.7, b = -0.6;
    auto grad_of = [&](const ScalarFunction& fn) {
        auto x = x0.clone(true);
        backward(fn(x));
        return std::vector<double>(x.grad().begin(), x.grad().end());
    };
    auto gf = grad_of(f);
    auto gg = grad_of(g);
    auto gc = grad_of([&](const Tensor& x) { return f(x) * a + g(x) * b; });
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(gc[i], a * gf[i] + b * gg[i], 1e-10);
}
