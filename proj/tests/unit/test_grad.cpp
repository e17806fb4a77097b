// SPDX-License-Identifier: Apache-2.0

#include <functional>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace ap = adaptprompt;
using ap::OpId;
using ap::Tensor;

namespace {

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Random inputs for `op`; relu inputs are kept away from the kink.
std::vector<Tensor> sample_inputs(OpId op, ap::Rng& rng, ap::OpAttributes& attrs) {
    auto r = [&](ap::Shape s) { return oracle::random_tensor(rng, std::move(s)); };
    switch (op) {
        case OpId::matmul: return {r({3, 4}), r({4, 2})};
        case OpId::relu:
        case OpId::quick_gelu: {
            Tensor x = r({3, 5});
            for (double& v : x.data())
                if (std::abs(v) < 1e-3) v = 0.5;
            return {x};
        }
        case OpId::softmax:
            attrs.axis = rng.below(2);
            return {oracle::random_tensor(rng, {3, 4}, -3, 3)};
        case OpId::layer_norm: return {r({3, 6}), r({6}), r({6})};
        case OpId::multi_head_attention: {
            attrs.heads = 2;
            std::vector<Tensor> in{r({3, 4})};
            for (int k = 0; k < 4; ++k) {
                in.push_back(oracle::random_tensor(rng, {4, 4}, -0.7, 0.7));
                in.push_back(r({4}));
            }
            return in;
        }
        case OpId::add: return {r({2, 3}), r({2, 3})};
        case OpId::cosine_similarity: return {r({3, 5}), r({2, 5})};
        case OpId::cross_entropy: {
            Tensor labels({4});
            for (double& v : labels.data()) v = static_cast<double>(rng.below(3));
            return {oracle::random_tensor(rng, {4, 3}, -3, 3), labels};
        }
    }
    return {};
}

}  // namespace

class VjpFiniteDifference : public ::testing::TestWithParam<OpId> {};

TEST_P(VjpFiniteDifference, TwentyRandomPoints) {
    const OpId op = GetParam();
    ap::Rng rng(100 + static_cast<std::uint64_t>(op));
    for (int trial = 0; trial < 20; ++trial) {
        ap::OpAttributes attrs;
        std::vector<Tensor> in = sample_inputs(op, rng, attrs);
        const Tensor out = ap::forward(op, in, attrs);
        const Tensor g = oracle::random_tensor(rng, out.shape());
        const auto grads = ap::vjp(op, in, g, attrs);
        ASSERT_EQ(grads.size(), in.size());
        const std::size_t checked = op == OpId::cross_entropy ? 1 : in.size();
        for (std::size_t k = 0; k < checked; ++k) {
            auto f = [&](const Tensor& xk) {
                std::vector<Tensor> probe = in;
                probe[k] = xk;
                return dot(ap::forward(op, probe, attrs), g);
            };
            const Tensor numeric = ap::finite_difference_grad(f, in[k], 1e-6);
            // The key bias cancels inside the softmax, so its gradient is identically zero.
            if (op == OpId::multi_head_attention && k == 4) {
                EXPECT_LE(ap::max_abs_diff(grads[k], numeric), 1e-8) << "trial " << trial;
                EXPECT_LE(ap::max_abs_diff(grads[k], Tensor::zeros(in[k].shape())), 1e-12) << "trial " << trial;
                continue;
            }
            EXPECT_LT(ap::relative_error(grads[k], numeric), 1e-5)
                << ap::op_name(op) << " input " << k << " trial " << trial;
        }
    }
}

INSTANTIATE_TEST_SUITE_P(AllOps, VjpFiniteDifference,
                         ::testing::Values(OpId::matmul, OpId::relu, OpId::quick_gelu, OpId::softmax, OpId::layer_norm,
                                           OpId::multi_head_attention, OpId::add, OpId::cosine_similarity,
                                           OpId::cross_entropy),
                         [](const auto& info) { return std::string(ap::op_name(info.param)); });

TEST(Vjp, AddPassesUpstreamToBoth) {
    const Tensor a = Tensor::vector({1, 2}), b = Tensor::vector({3, 4}), g = Tensor::vector({5, 6});
    const std::vector<Tensor> in{a, b};
    const auto grads = ap::vjp(OpId::add, in, g);
    EXPECT_EQ(grads[0], g);
    EXPECT_EQ(grads[1], g);
}

TEST(Vjp, ReluNegativeInputGivesZeros) {
    const std::vector<Tensor> in{Tensor::vector({-1, -2, -0.1})};
    EXPECT_EQ(ap::vjp(OpId::relu, in, Tensor::ones({3}))[0], Tensor::zeros({3}));
}

TEST(Vjp, ReluSubgradientAtZeroIsZero) {
    const std::vector<Tensor> in{Tensor::vector({0.0, 1.0})};
    EXPECT_EQ(ap::vjp(OpId::relu, in, Tensor::ones({2}))[0], Tensor::vector({0.0, 1.0}));
}

TEST(Vjp, UnknownOpNameThrows) {
    EXPECT_THROW((void)ap::parse_op("conv2d"), std::invalid_argument);
    EXPECT_EQ(ap::parse_op("layer_norm"), OpId::layer_norm);
}

TEST(Vjp, UpstreamShapeMismatchThrows) {
    const std::vector<Tensor> in{Tensor({2, 3}), Tensor({3, 2})};
    EXPECT_THROW((void)ap::vjp(OpId::matmul, in, Tensor({3, 3})), ap::DimensionError);
}

TEST(FiniteDifference, SumGivesOnes) {
    ap::Rng rng(11);
    const Tensor x = oracle::random_tensor(rng, {3, 2});
    auto sum = [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.data()) s += v;
        return s;
    };
    EXPECT_LE(ap::max_abs_diff(ap::finite_difference_grad(sum, x), Tensor::ones({3, 2})), 1e-9);
}

TEST(FiniteDifference, ConstantGivesZero) {
    EXPECT_EQ(ap::finite_difference_grad([](const Tensor&) { return 0.0; }, Tensor::ones({4})), Tensor::zeros({4}));
}

TEST(FiniteDifference, SquareAtThree) {
    const Tensor g = ap::finite_difference_grad([](const Tensor& t) { return t[0] * t[0]; }, Tensor::scalar(3.0), 1e-6);
    EXPECT_NEAR(g[0], 6.0, 1e-6);
}

TEST(FiniteDifference, NonFiniteValueThrows) {
    auto f = [](const Tensor& t) { return std::log(t[0]); };
    EXPECT_THROW((void)ap::finite_difference_grad(f, Tensor::scalar(0.0)), ap::NumericError);
    EXPECT_THROW((void)ap::finite_difference_grad(f, Tensor::scalar(1.0), 0.0), std::invalid_argument);
}
