#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "cure/error.hpp"
#include "cure/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace cure;
using oracle::grad_check;
using oracle::random_tensor;

namespace {

// Values bounded away from zero so relu and clamp are differentiable at the
// sample and within the finite-difference stencil.
Tensor away_from_kinks(Shape shape, std::mt19937_64& rng)
{
    auto t = random_tensor(std::move(shape), rng);
    std::vector<double> v(t.data().begin(), t.data().end());
    for (auto& x : v) x = x < 0 ? x - 0.05 : x + 0.05;
    return Tensor::from(t.shape(), v);
}

} // namespace

TEST(Tensor, ConstructionAndAccess)
{
    const auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
    EXPECT_DOUBLE_EQ(Tensor::scalar(3.5).item(), 3.5);
    EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
    EXPECT_THROW(Tensor::from({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
    EXPECT_THROW((void)t.item(), ShapeError);
}

TEST(Tensor, ForwardValuesByHand)
{
    const auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    const auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
    const auto c = matmul(a, b);
    EXPECT_DOUBLE_EQ(c.at(0, 0), 19.0);
    EXPECT_DOUBLE_EQ(c.at(0, 1), 22.0);
    EXPECT_DOUBLE_EQ(c.at(1, 0), 43.0);
    EXPECT_DOUBLE_EQ(c.at(1, 1), 50.0);

    const auto r = relu(Tensor::from({3}, {-1, 0, 2}));
    EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{0, 0, 2}));

    const auto bias = Tensor::from({2}, {10, 20});
    const auto bc = add(a, bias);
    EXPECT_DOUBLE_EQ(bc.at(1, 1), 24.0);

    EXPECT_DOUBLE_EQ(sum(a).item(), 10.0);
    EXPECT_DOUBLE_EQ(mean(a).item(), 2.5);
    EXPECT_DOUBLE_EQ(transpose(a).at(0, 1), 3.0);

    const std::vector<int> idx{1, 0};
    const auto p = pick(a, idx);
    EXPECT_DOUBLE_EQ(p.at(0), 2.0);
    EXPECT_DOUBLE_EQ(p.at(1), 3.0);
}

TEST(Tensor, LogSoftmaxRowsNormalize)
{
    std::mt19937_64 rng(3);
    const auto z = random_tensor({4, 5}, rng, -30, 30);
    const auto ls = log_softmax(z);
    for (std::size_t i = 0; i < 4; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 5; ++j) s += std::exp(ls.at(i, j));
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    // Large logits stay finite.
    const auto big = log_softmax(Tensor::from({1, 2}, {1000.0, 0.0}));
    EXPECT_NEAR(big.at(0, 0), 0.0, 1e-12);
    EXPECT_NEAR(big.at(0, 1), -1000.0, 1e-9);
}

TEST(Tensor, ShapeErrors)
{
    const auto a = Tensor::zeros({2, 3});
    EXPECT_THROW((void)add(a, Tensor::zeros({3, 2})), ShapeError);
    EXPECT_THROW((void)matmul(a, Tensor::zeros({2, 3})), ShapeError);
    const std::vector<int> bad{0, 3};
    EXPECT_THROW((void)pick(a, bad), InvalidArgument);
}

TEST(Tensor, PrimitiveGradientsMatchFiniteDifferences)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        const auto a = random_tensor({3, 4}, rng);
        const auto b = random_tensor({3, 4}, rng);
        const auto w = random_tensor({4, 2}, rng);
        const auto row = random_tensor({4}, rng);
        const std::vector<int> labels{0, 3, 1};

        EXPECT_LT(grad_check([](auto& v) { return sum(mul(add(v[0], v[1]), v[0])); }, {a, b}), 1e-7);
        EXPECT_LT(grad_check([](auto& v) { return sum(mul(sub(v[0], v[1]), v[1])); }, {a, b}), 1e-7);
        EXPECT_LT(grad_check([](auto& v) { return sum(mul(add(v[0], v[1]), v[0])); }, {a, row}), 1e-7);
        EXPECT_LT(grad_check([](auto& v) { return sum(mul(matmul(v[0], v[1]), matmul(v[0], v[1]))); }, {a, w}), 1e-7);
        EXPECT_LT(grad_check([](auto& v) { return sum(mul(transpose(v[0]), transpose(v[0]))); }, {a}), 1e-7);
        EXPECT_LT(grad_check([](auto& v) { return mean(exp(v[0])); }, {a}), 1e-7);
        EXPECT_LT(grad_check([](auto& v) { return sum(scale(mul(v[0], v[0]), -2.5)); }, {a}), 1e-7);
        EXPECT_LT(grad_check([&](auto& v) { return mean(pick(log_softmax(v[0]), labels)); }, {a}), 1e-7);
        EXPECT_LT(grad_check([](auto& v) { return sum(mul(log_softmax(v[0]), v[1])); }, {a, b}), 1e-7);

        const auto k = away_from_kinks({3, 4}, rng);
        EXPECT_LT(grad_check([](auto& v) { return sum(mul(relu(v[0]), v[0])); }, {k}), 1e-7);
        EXPECT_LT(grad_check([](auto& v) { return sum(mul(clamp(v[0], -0.5, 0.5), v[0])); }, {k}), 1e-7);
    }
}

TEST(Tensor, GradientsAccumulateAcrossBackwardCalls)
{
    auto x = Tensor::from({2}, {1.0, 2.0}, true);
    backward(sum(mul(x, x)));
    backward(sum(mul(x, x)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
    x.zero_grad();
    EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, SharedSubexpressionGradientsAdd)
{
    auto x = Tensor::from({1}, {3.0}, true);
    const auto y = mul(x, x);
    backward(sum(add(y, y)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Tensor, GradientIsLinearInTheLoss)
{
    std::mt19937_64 rng(11);
    const auto base = random_tensor({2, 3}, rng);
    auto grad_of = [&](auto build) {
        auto leaf = base.clone(true);
        backward(build(leaf));
        return std::vector<double>(leaf.grad().begin(), leaf.grad().end());
    };
    const auto gf = grad_of([](const Tensor& x) { return sum(exp(x)); });
    const auto gg = grad_of([](const Tensor& x) { return sum(mul(x, x)); });
    const auto gc = grad_of([](const Tensor& x) { return add(scale(sum(exp(x)), 2.0), scale(sum(mul(x, x)), -3.0)); });
    for (std::size_t i = 0; i < gc.size(); ++i) {
        EXPECT_NEAR(gc[i], 2.0 * gf[i] - 3.0 * gg[i], 1e-12);
    }
}

TEST(Tensor, GradWrtLeavesStoredGradsAlone)
{
    auto x = Tensor::from({2}, {1.0, -1.0}, true);
    auto y = Tensor::from({2}, {0.5, 2.0}, true);
    const auto loss = sum(mul(x, y));
    const auto gx = grad_wrt(loss, x);
    EXPECT_DOUBLE_EQ(gx.at(0), 0.5);
    EXPECT_DOUBLE_EQ(gx.at(1), 2.0);
    EXPECT_FALSE(x.has_grad());
    EXPECT_FALSE(y.has_grad());
    EXPECT_FALSE(gx.requires_grad());
    const auto z = Tensor::from({2}, {1.0, 1.0}, true);
    EXPECT_THROW((void)grad_wrt(loss, z), GraphError);
}

TEST(Tensor, NoGradModeRecordsNothing)
{
    auto x = Tensor::from({2}, {1.0, 2.0}, true);
    Tensor loss;
    {
        NoGradGuard guard;
        EXPECT_FALSE(grad_mode_enabled());
        loss = sum(mul(x, x));
    }
    EXPECT_TRUE(grad_mode_enabled());
    EXPECT_FALSE(loss.requires_grad());
    EXPECT_THROW(backward(loss), GraphError);
}

TEST(Tensor, BackwardRejectsNonScalar)
{
    auto x = Tensor::from({2}, {1.0, 2.0}, true);
    EXPECT_THROW(backward(mul(x, x)), ShapeError);
}

TEST(Tensor, TapeIsTopologicallyOrderedAndDeterministic)
{
    auto x = Tensor::from({2}, {1.0, 2.0}, true);
    const auto loss = sum(exp(mul(x, x)));
    const auto tape = Tape::record(loss);
    EXPECT_TRUE(tape.contains(x));
    EXPECT_EQ(tape.size(), 4u);
    for (std::size_t i = 1; i < tape.nodes().size(); ++i) {
        EXPECT_LT(tape.nodes()[i - 1]->sequence, tape.nodes()[i]->sequence);
    }
    auto run = [] {
        auto leaf = Tensor::from({2}, {0.3, -0.7}, true);
        backward(sum(exp(mul(leaf, leaf))));
        return std::vector<double>(leaf.grad().begin(), leaf.grad().end());
    };
    EXPECT_EQ(run(), run());
}

TEST(Tensor, NonFiniteResultsAreReported)
{
    const auto big = Tensor::from({1}, {1000.0});
    EXPECT_THROW((void)exp(big), NumericError);
}

TEST(Tensor, MutationOnlyOnLeaves)
{
    auto x = Tensor::from({1}, {1.0}, true);
    auto y = mul(x, x);
    EXPECT_THROW((void)y.mutable_data(), GraphError);
    x.mutable_data()[0] = 2.0;
    EXPECT_DOUBLE_EQ(x.at(0), 2.0);
}
