#include <gtest/gtest.h>

#include "gtseg/ops.hpp"
#include "gtseg/tensor.hpp"
#include "test_util.hpp"

using namespace gtseg;

TEST(Tensor, ShapeAndIndexing) {
  Tensor t(Shape{2, 3, 4, 5}, 1.5);
  EXPECT_EQ(t.numel(), 120u);
  EXPECT_EQ(t.rank(), 4u);
  t.at(1, 2, 3, 4) = 7.0;
  EXPECT_EQ(t[119], 7.0);
  EXPECT_TRUE(t.all_finite());
  t[0] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

TEST(Tensor, RejectsMismatchedValues) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(check_same_shape(Tensor(Shape{2}), Tensor(Shape{3}), "test"), std::invalid_argument);
}

TEST(Autograd, DiamondGraphAccumulatesBothPaths) {
  // y = 2x + 3x, dy/dx = 5 everywhere.
  auto x = test::leaf(Tensor(Shape{3}, 1.0));
  const ag::Var y = ops::add(ops::scale(x, 2.0), ops::scale(x, 3.0));
  ag::backward(test::probe_sum(y, Tensor(Shape{3}, 1.0)));
  for (double g : x.grad().values())
    EXPECT_EQ(g, 5.0);
}

TEST(Autograd, NoGradGuardSkipsRecording) {
  auto x = test::leaf(Tensor(Shape{2}, 1.0));
  ag::Var y;
  {
    ag::NoGradGuard guard;
    EXPECT_FALSE(ag::grad_enabled());
    y = ops::scale(x, 2.0);
  }
  EXPECT_TRUE(ag::grad_enabled());
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Autograd, ConstantsReceiveNoGradient) {
  ag::Var c(Tensor(Shape{2}, 3.0));
  auto x = test::leaf(Tensor(Shape{2}, 1.0));
  ag::backward(test::probe_sum(ops::add(c, x), Tensor(Shape{2}, 1.0)));
  EXPECT_TRUE(c.grad().empty());
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Autograd, BackwardNeedsScalarRoot) {
  auto x = test::leaf(Tensor(Shape{2}, 1.0));
  EXPECT_THROW(ag::backward(ops::scale(x, 2.0)), std::invalid_argument);
}
