#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "gtseg/losses.hpp"
#include "test_util.hpp"

using namespace gtseg;
using namespace gtseg::losses;

namespace {

ag::Var scalar(double v) { return test::leaf(Tensor(Shape{1}, v)); }

selftrain::PseudoLabel pseudo(int h, int w, std::uint8_t label, double q) {
  selftrain::PseudoLabel pl;
  pl.labels = LabelMap(h, w, label);
  pl.confidence = Grid<double>(h, w, 1.0);
  pl.q = q;
  return pl;
}

TEST(CeLoss, UniformLogitsGiveLogC) {
  const std::vector<std::uint8_t> labels{0, 1, 2, 3, 4, 5, 0, 1};
  const ag::Var l = ce_loss(ag::Var(Tensor(Shape{1, 6, 2, 4}, 0.7)), labels);
  EXPECT_NEAR(l.value()[0], 1.791759469228055, 1e-12);
  EXPECT_NEAR(l.value()[0], std::log(6.0), 1e-15);
}

TEST(CeLoss, SaturatedCorrectLogitsGoToZero) {
  Tensor t(Shape{1, 3, 1, 3}, 0.0);
  const std::vector<std::uint8_t> labels{2, 0, 1};
  for (int i = 0; i < 3; ++i)
    t.at(0, labels[i], 0, i) = 40.0;
  EXPECT_LT(ce_loss(ag::Var(t), labels).value()[0], 1e-6);
}

TEST(CeLoss, IgnoredPixelsAreExcludedFromBothSums) {
  Rng rng(2);
  const Tensor t = test::random_tensor(Shape{1, 3, 1, 4}, rng);
  const double all_but_last = ce_loss(ag::Var(t), std::vector<std::uint8_t>{0, 1, 2, 255}).value()[0];
  double brute = 0;
  for (int i = 0; i < 3; ++i) {
    double z = 0;
    for (int c = 0; c < 3; ++c)
      z += std::exp(t.at(0, c, 0, i));
    brute -= std::log(std::exp(t.at(0, i, 0, i)) / z);
  }
  EXPECT_NEAR(all_but_last, brute / 3.0, 1e-12);
  EXPECT_THROW(ce_loss(ag::Var(t), std::vector<std::uint8_t>(4, 255)), std::invalid_argument);
}

TEST(Beta, ClosedForms) {
  EXPECT_EQ(beta(0.0, 5.0), 0.0);
  for (double r : {0.0, 0.3, 1.0})
    EXPECT_EQ(beta(r, 0.0), 0.0);
  EXPECT_NEAR(beta(0.5, 5.0), 0.9179150013761012, 1e-15);
}

TEST(Beta, MonotoneAndBounded) {
  for (double d : {0.5, 5.0, 20.0}) {
    double prev = -1;
    for (int i = 0; i <= 100; ++i) {
      const double b = beta(i / 100.0, d);
      EXPECT_GT(b, prev);
      EXPECT_GE(b, 0.0);
      EXPECT_LE(b, 1.0 - std::exp(-d));
      prev = b;
    }
  }
}

TEST(GuidanceLoss, ZeroRatioOrZeroQualityGivesZero) {
  Rng rng(3);
  const ag::Var logits(test::random_tensor(Shape{1, 6, 4, 4}, rng));
  LossConfig cfg;
  const std::vector<selftrain::PseudoLabel> pl{pseudo(4, 4, 2, 0.8)};
  EXPECT_EQ(guidance_loss(logits, pl, std::vector<double>{0.0}, cfg).loss.value()[0], 0.0);
  const std::vector<selftrain::PseudoLabel> pl0{pseudo(4, 4, 2, 0.0)};
  EXPECT_EQ(guidance_loss(logits, pl0, std::vector<double>{0.7}, cfg).loss.value()[0], 0.0);
}

TEST(GuidanceLoss, UniformLogitsFullRatio) {
  const ag::Var logits(Tensor(Shape{1, 6, 4, 4}, 0.0));
  const std::vector<selftrain::PseudoLabel> pl{pseudo(4, 4, 3, 1.0)};
  const GuidanceTerm g = guidance_loss(logits, pl, std::vector<double>{1.0}, LossConfig{});
  EXPECT_NEAR(g.loss.value()[0], 1.7796866888892868, 1e-12);
  EXPECT_NEAR(g.loss.value()[0], (1.0 - std::exp(-5.0)) * std::log(6.0), 1e-14);
  EXPECT_NEAR(g.mean_beta, 1.0 - std::exp(-5.0), 1e-15);
}

TEST(GuidanceLoss, PerImageWeightsAveragedOverAllPixels) {
  Rng rng(4);
  const Tensor t = test::random_tensor(Shape{2, 3, 2, 2}, rng);
  const std::vector<selftrain::PseudoLabel> pl{pseudo(2, 2, 1, 0.25), pseudo(2, 2, 2, 0.75)};
  const std::vector<double> r{0.2, 0.6};
  const double got = guidance_loss(ag::Var(t), pl, r, LossConfig{}).loss.value()[0];
  double expected = 0;
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 4; ++i) {
      double z = 0;
      for (int c = 0; c < 3; ++c)
        z += std::exp(t.at(b, c, i / 2, i % 2));
      const double ce = -std::log(std::exp(t.at(b, 1 + b, i / 2, i % 2)) / z);
      expected += (1.0 - std::exp(-5.0 * r[b])) * pl[b].q * ce;
    }
  EXPECT_NEAR(got, expected / 8.0, 1e-12);
}

TEST(GuidanceLoss, UncertaintyOffUsesConstantFactor) {
  Rng rng(5);
  const ag::Var logits(test::random_tensor(Shape{1, 4, 2, 2}, rng));
  const std::vector<selftrain::PseudoLabel> pl{pseudo(2, 2, 1, 0.5)};
  LossConfig on, off;
  off.uncertainty = false;
  const double a = guidance_loss(logits, pl, std::vector<double>{0.3}, on).loss.value()[0];
  const double b = guidance_loss(logits, pl, std::vector<double>{0.3}, off).loss.value()[0];
  EXPECT_NEAR(a, beta(0.3, 5.0) * b, 1e-14);
}

TEST(GuidanceLoss, PerPixelQualityUsesConfidenceIndicator) {
  Rng rng(6);
  const ag::Var logits(test::random_tensor(Shape{1, 3, 1, 2}, rng));
  selftrain::PseudoLabel pl = pseudo(1, 2, 0, 0.5);
  pl.confidence.values = {0.99, 0.5};
  LossConfig cfg;
  cfg.quality = QualityMode::per_pixel;
  cfg.uncertainty = false;
  const double got = guidance_loss(logits, std::vector{pl}, std::vector<double>{1.0}, cfg).loss.value()[0];
  const Tensor &t = logits.value();
  const double z = std::exp(t[0]) + std::exp(t[2]) + std::exp(t[4]);
  EXPECT_NEAR(got, -std::log(std::exp(t[0]) / z) / 2.0, 1e-12);
}

TEST(GuidanceLoss, RejectsShapeMismatch) {
  const ag::Var logits(Tensor(Shape{1, 6, 4, 4}, 0.0));
  EXPECT_THROW(guidance_loss(logits, std::vector{pseudo(2, 2, 0, 1.0)}, std::vector<double>{1.0}, LossConfig{}),
               std::invalid_argument);
  EXPECT_THROW(guidance_loss(logits, std::vector{pseudo(4, 4, 0, 1.0)}, std::vector<double>{}, LossConfig{}),
               std::invalid_argument);
}

TEST(TotalLoss, ArithmeticAndLambdaZero) {
  LossConfig cfg;
  EXPECT_EQ(total_loss(scalar(1), scalar(2), scalar(3), cfg).breakdown.total, 6.0);
  cfg.lambda_gt = 0.0;
  const Objective o = total_loss(scalar(1.25), scalar(2.5), scalar(3), cfg);
  EXPECT_EQ(o.breakdown.total, 1.25 + 2.5);
  EXPECT_EQ(o.total.value()[0], 3.75);
  EXPECT_EQ(total_loss(scalar(1), ag::Var{}, ag::Var{}, cfg).breakdown.total, 1.0);
}

TEST(TotalLoss, NonFiniteComponentIsNamed) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    total_loss(scalar(1), scalar(2), scalar(nan), LossConfig{});
    FAIL();
  } catch (const std::domain_error &e) {
    EXPECT_NE(std::string(e.what()).find("L_gt"), std::string::npos) << e.what();
  }
  try {
    total_loss(scalar(INFINITY), scalar(2), scalar(1), LossConfig{});
    FAIL();
  } catch (const std::domain_error &e) {
    EXPECT_NE(std::string(e.what()).find("L_sup"), std::string::npos) << e.what();
  }
}

TEST(TotalLoss, GradientsScaleWithLambda) {
  LossConfig cfg;
  cfg.lambda_gt = 0.25;
  ag::Var a = scalar(1), b = scalar(2), c = scalar(3);
  ag::backward(total_loss(a, b, c, cfg).total);
  EXPECT_EQ(a.grad()[0], 1.0);
  EXPECT_EQ(b.grad()[0], 1.0);
  EXPECT_EQ(c.grad()[0], 0.25);
}

TEST(LossConfig, Validation) {
  LossConfig cfg;
  cfg.lambda_gt = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = LossConfig{};
  cfg.d = -0.1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = LossConfig{};
  cfg.tau = 1.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_NO_THROW(LossConfig{}.validate());
}

} // namespace
