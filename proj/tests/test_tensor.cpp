#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <thread>

#include "fscil/gradcheck.hpp"
#include "fscil/ops.hpp"
#include "fscil/rng.hpp"

using namespace fscil;
using Td = Tensor<double>;

namespace {

Td leaf(Shape shape, std::vector<double> values) {
  Td t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Td({2, 3}, std::vector<double>(5)), ShapeError);
  Td t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
}

TEST(Tensor, RejectsNonFiniteConstruction) {
  EXPECT_THROW(Td({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
  EXPECT_THROW(Td({1}, {std::numeric_limits<double>::infinity()}), NumericError);
}

TEST(Tensor, OpsRaiseOnNonFiniteResults) {
  Td x({2}, {-1.0, 1.0});
  EXPECT_THROW(log(x), NumericError);
  Td big({1}, {1000.0});
  EXPECT_THROW(exp(big), NumericError);
  Td zero({1}, {0.0});
  EXPECT_THROW(div(Td({1}, {1.0}), zero), NumericError);
}

TEST(Tensor, ScalarIsRankZero) {
  const auto s = Td::scalar(3.5);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s.item(), 3.5);
}

TEST(Backward, SumOfSquares) {
  auto x = leaf({2}, {1.0, 2.0});
  backward(sum(square(x)));
  ASSERT_TRUE(x.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, GradShapeMatchesData) {
  auto rng = make_rng(1, "grad_shape");
  auto x = Td::randn({3, 4}, rng);
  x.set_requires_grad(true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad().size(), x.numel());
}

TEST(Backward, ConstantLossIsNoOp) {
  const auto c = Td::scalar(2.0);
  EXPECT_NO_THROW(backward(c));
  EXPECT_TRUE(backward(c).empty());
  EXPECT_FALSE(c.has_grad());
}

TEST(Backward, DetachedLossIsRejected) {
  auto x = leaf({2}, {1.0, 2.0});
  const auto loss = sum(x).detach();
  EXPECT_THROW(backward(loss), ContractError);
}

TEST(Backward, DetachStopsGradient) {
  auto x = leaf({2}, {1.0, 2.0});
  auto y = leaf({2}, {3.0, 4.0});
  backward(sum(mul(x.detach(), y)));
  EXPECT_FALSE(x.has_grad());
  EXPECT_DOUBLE_EQ(y.grad()[0], 1.0);
}

TEST(Backward, AccumulatesAcrossCalls) {
  auto x = leaf({1}, {3.0});
  backward(sum(x));
  backward(sum(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, SharedSubexpressionCountsTwice) {
  auto x = leaf({1}, {3.0});
  const auto y = square(x);
  backward(sum(add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Backward, EveryRequiresGradLeafReceivesGrad) {
  auto a = leaf({2}, {1.0, -1.0});
  auto b = leaf({2}, {0.5, 0.5});
  auto c = leaf({1}, {2.0});
  backward(sum(mul(add(a, b), c)));
  EXPECT_TRUE(a.has_grad());
  EXPECT_TRUE(b.has_grad());
  EXPECT_TRUE(c.has_grad());
}

TEST(Backward, ReplayVisitsInStrictReverseExecutionOrder) {
  auto x = leaf({3}, {0.1, 0.2, 0.3});
  const auto y = exp(x);
  const auto z = mul(y, x);
  const auto w = add(z, y);
  const auto loss = sum(w);
  const auto visited = backward(loss);
  ASSERT_GE(visited.size(), 5u);
  for (std::size_t i = 1; i < visited.size(); ++i) EXPECT_GT(visited[i - 1], visited[i]);
  EXPECT_EQ(visited.front(), loss.seq());
  EXPECT_EQ(visited.back(), x.seq());
}

TEST(Backward, NonScalarLossIsRejected) {
  auto x = leaf({2}, {1.0, 2.0});
  EXPECT_THROW(backward(x), ShapeError);
}

TEST(NoGrad, GuardDisablesRecordingOnThisThreadOnly) {
  auto x = leaf({1}, {1.0});
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    EXPECT_FALSE(square(x).requires_grad());
    bool other = false;
    std::thread([&] { other = grad_enabled(); }).join();
    EXPECT_TRUE(other);
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(square(x).requires_grad());
}

TEST(Tensor, MutableDataOnlyOnLeaves) {
  auto x = leaf({1}, {1.0});
  auto y = square(x);
  EXPECT_THROW(y.mutable_data(), ContractError);
  EXPECT_NO_THROW(x.mutable_data());
}

TEST(GradientCheck, LinearFunctionIsExact) {
  auto rng = make_rng(3, "gc_linear");
  const auto err = gradient_check<double>([](const Td& x) { return sum(x); }, Td::randn({7}, rng), 1e-5);
  EXPECT_LE(err, 1e-10);
}

TEST(GradientCheck, SumOfExp) {
  const auto err = gradient_check<double>([](const Td& x) { return sum(exp(x)); }, Td({2}, {0.0, 1.0}), 1e-5);
  EXPECT_LE(err, 1e-6);
}

TEST(GradientCheck, DetectsWrongBackward) {
  // x^2 with a backward that returns x instead of 2x.
  auto wrong_square = [](const Td& x) {
    return detail::unary_op<double>(
        "wrong_square", x, [](double v) { return v * v; }, [](double v, double, double g) { return g * v; });
  };
  const auto err = gradient_check<double>([&](const Td& x) { return sum(wrong_square(x)); }, Td({2}, {1.0, 2.0}), 1e-5);
  EXPECT_GT(err, 0.1);
}
