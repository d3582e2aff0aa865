#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "ddlab/ops.hpp"
#include "ddlab/tensor.hpp"
#include "finite_difference.hpp"
#include "gradient_cases.hpp"

using namespace ddlab;
using ddlab::testing::check_gradients;
using ddlab::testing::probe;
using ddlab::testing::random_tensor;

namespace {

constexpr double kTol = 1e-4;

}  // namespace

TEST(Tensor, ShapeAndValues) {
    Tensor<float> t({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.dim(1), 3u);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_FLOAT_EQ(t[4], 5.f);
    EXPECT_THROW(Tensor<float>({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(Tensor, BackwardRequiresScalarLoss) {
    auto a = Tensor<double>({2}, {1, 2}, true);
    auto y = scale(a, 2.0);
    EXPECT_THROW(backward(y), ContractError);
}

TEST(Tensor, BackwardTwiceIsAnError) {
    auto a = Tensor<double>({2}, {1, 2}, true);
    auto y = sum(a);
    backward(y);
    EXPECT_THROW(backward(y), ContractError);
}

TEST(Tensor, NoGradGuardSkipsTape) {
    auto a = Tensor<double>({2}, {1, 2}, true);
    {
        NoGradGuard g;
        auto y = sum(a);
        EXPECT_FALSE(y.requires_grad());
        EXPECT_THROW(backward(y), ContractError);
    }
    auto y = sum(a);
    EXPECT_TRUE(y.requires_grad());
}

TEST(Tensor, GradientsAccumulateAcrossUses) {
    auto a = Tensor<double>({1}, {3}, true);
    auto y = add(mul(a, a), a);  // a^2 + a
    backward(y);
    EXPECT_DOUBLE_EQ(a.grad()[0], 7.0);
}

TEST(Tensor, DetachCutsTheTape) {
    auto a = Tensor<double>({1}, {3}, true);
    auto y = mul(a.detach(), a);
    backward(y);
    EXPECT_DOUBLE_EQ(a.grad()[0], 3.0);
}

TEST(Ops, MatmulValues) {
    Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> b({3, 2}, {7, 8, 9, 10, 11, 12});
    auto c = matmul(a, b);
    ASSERT_EQ(c.shape(), (Shape{2, 2}));
    EXPECT_DOUBLE_EQ(c[0], 58);
    EXPECT_DOUBLE_EQ(c[1], 64);
    EXPECT_DOUBLE_EQ(c[2], 139);
    EXPECT_DOUBLE_EQ(c[3], 154);
}

TEST(Ops, MatmulShapeMismatchNamesShapes) {
    Tensor<double> a({2, 3}), b({2, 3});
    try {
        matmul(a, b);
        FAIL();
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
    }
}

TEST(Ops, SoftmaxRowsSumToOneAndCausalMask) {
    Tensor<double> x({3, 3}, {1, 2, 3, 0, 0, 0, -5, 10, 2});
    auto p = softmax_rows(x, true);
    EXPECT_DOUBLE_EQ(p[1], 0.0);
    EXPECT_DOUBLE_EQ(p[2], 0.0);
    EXPECT_DOUBLE_EQ(p[0], 1.0);
    EXPECT_DOUBLE_EQ(p[3] + p[4], 1.0);
    EXPECT_DOUBLE_EQ(p[5], 0.0);
    EXPECT_NEAR(p[6] + p[7] + p[8], 1.0, 1e-15);
}

TEST(Ops, SoftmaxIsStableForLargeLogits) {
    Tensor<double> x({1, 3}, {1000, 1000, -1000});
    auto p = softmax_rows(x);
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_TRUE(std::isfinite(p[2]));
}

TEST(Ops, GeluKnownValues) {
    Tensor<double> x({3}, {0, 1, -1});
    auto y = gelu(x);
    EXPECT_DOUBLE_EQ(y[0], 0.0);
    const double k = std::sqrt(2.0 / M_PI);
    EXPECT_NEAR(y[1], 0.5 * (1 + std::tanh(k * (1 + 0.044715))), 1e-15);
    EXPECT_NEAR(y[1] - y[2], 1.0, 1e-15);  // gelu(x) - gelu(-x) = x
}

TEST(Ops, LayerNormNormalizesRows) {
    Tensor<double> x({2, 4}, {1, 2, 3, 4, -1, 0, 0, 5});
    Tensor<double> g({4}, {1, 1, 1, 1}), b({4}, {0, 0, 0, 0});
    auto y = layer_norm(x, g, b);
    for (int r = 0; r < 2; ++r) {
        double m = 0, v = 0;
        for (int j = 0; j < 4; ++j) m += y[r * 4 + j];
        m /= 4;
        for (int j = 0; j < 4; ++j) v += (y[r * 4 + j] - m) * (y[r * 4 + j] - m);
        EXPECT_NEAR(m, 0, 1e-12);
        EXPECT_NEAR(v / 4, 1, 1e-4);
    }
}

TEST(Ops, EmbeddingRejectsOutOfRangeIds) {
    Tensor<double> table({3, 2}, {0, 1, 2, 3, 4, 5});
    std::vector<std::int32_t> ok{2, 0}, bad{3};
    auto e = embedding(table, std::span<const std::int32_t>(ok));
    EXPECT_DOUBLE_EQ(e[0], 4);
    EXPECT_DOUBLE_EQ(e[3], 1);
    EXPECT_THROW(embedding(table, std::span<const std::int32_t>(bad)), IndexError);
}

TEST(Ops, RopeRejectsOddHeadDim) {
    Tensor<double> x({2, 6});
    std::vector<std::int32_t> pos{0, 1};
    EXPECT_THROW(rope(x, 3, std::span<const std::int32_t>(pos)), ConfigError);
}

TEST(Ops, RopePreservesNormsAndScoresDependOnOffsetOnly) {
    std::mt19937_64 gen(3);
    auto q = random_tensor({1, 8}, gen), k = random_tensor({1, 8}, gen);
    auto score = [&](int pq, int pk) {
        std::vector<std::int32_t> a{pq}, b{pk};
        auto rq = rope(q, 8, std::span<const std::int32_t>(a));
        auto rk = rope(k, 8, std::span<const std::int32_t>(b));
        double s = 0;
        for (int i = 0; i < 8; ++i) s += rq[i] * rk[i];
        return s;
    };
    EXPECT_NEAR(score(5, 2), score(13, 10), 1e-12);
    EXPECT_NEAR(score(0, 0), score(7, 7), 1e-12);
    std::vector<std::int32_t> p{9};
    auto r = rope(q, 8, std::span<const std::int32_t>(p));
    double n0 = 0, n1 = 0;
    for (int i = 0; i < 8; ++i) n0 += q[i] * q[i], n1 += r[i] * r[i];
    EXPECT_NEAR(n0, n1, 1e-12);
}

TEST(Ops, NllRowsMatchesLogSoftmax) {
    Tensor<double> logits({2, 3}, {1, 2, 3, 0, 0, 0});
    std::vector<std::int32_t> tgt{2, 1};
    auto nll = nll_rows(logits, std::span<const std::int32_t>(tgt));
    EXPECT_NEAR(nll[0], std::log(std::exp(1) + std::exp(2) + std::exp(3)) - 3, 1e-14);
    EXPECT_NEAR(nll[1], std::log(3.0), 1e-14);
    std::vector<std::int32_t> bad{3, 0};
    EXPECT_THROW(nll_rows(logits, std::span<const std::int32_t>(bad)), IndexError);
}

TEST(Ops, CrossEntropyAllZeroWeightsIsZero) {
    Tensor<double> logits({2, 3}, {1, 2, 3, 0, 0, 0}, true);
    std::vector<std::int32_t> tgt{2, 1};
    std::vector<double> w{0, 0};
    auto l = softmax_cross_entropy(logits, std::span<const std::int32_t>(tgt), std::span<const double>(w));
    EXPECT_DOUBLE_EQ(l.item(), 0.0);
}

TEST(Ops, ConcatAndSliceRoundTrip) {
    Tensor<double> x({3, 4});
    std::iota(x.data().begin(), x.data().end(), 0.0);
    auto left = slice(x, 0, 3, 0, 1), right = slice(x, 0, 3, 1, 4);
    auto back = concat(std::vector<Tensor<double>>{left, right}, 1);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(back[i], x[i]);
    auto top = slice(x, 0, 1, 0, 4), rest = slice(x, 1, 3, 0, 4);
    auto back0 = concat(std::vector<Tensor<double>>{top, rest}, 0);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(back0[i], x[i]);
    EXPECT_THROW(slice(x, 0, 4, 0, 1), DimensionError);
}

// One finite-difference case per op, each over ten seeds.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
    for (const auto& [name, err] : ddlab::testing::op_gradient_errors(GetParam()))
        EXPECT_LE(err, kTol) << name << " seed " << GetParam();
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, OpGradient, ::testing::Range(0, 10));
