#include <cmath>

#include <gtest/gtest.h>

#include "gtseg/selftrain.hpp"
#include "test_util.hpp"

using namespace gtseg;
using namespace gtseg::selftrain;

namespace {

SegModelConfig tiny_model() {
  SegModelConfig cfg;
  cfg.encoder_channels = {8, 8, 16};
  return cfg;
}

ParamList scalar_params(double v) { return {{"p", make_param(Tensor(Shape{1}, v))}}; }

// Two-class logits whose softmax max equals p (p >= 0.5).
Tensor logits_with_confidences(const std::vector<double> &p, int h, int w) {
  Tensor t(Shape{1, 2, h, w});
  for (int i = 0; i < h * w; ++i) {
    t[i] = std::log(p[i]);
    t[h * w + i] = std::log(1.0 - p[i]);
  }
  return t;
}

TEST(EmaUpdate, HandExamples) {
  auto t = scalar_params(2.0), s = scalar_params(4.0);
  ema_update(t, s, 0.5);
  EXPECT_EQ(t[0].var.value()[0], 3.0);
  ema_update(t, s, 1.0);
  EXPECT_EQ(t[0].var.value()[0], 3.0);
  ema_update(t, s, 0.0);
  EXPECT_EQ(t[0].var.value()[0], 4.0);
}

TEST(EmaUpdate, AlphaZeroCopiesAlphaOneFreezes) {
  SegModel student(tiny_model(), 1), other(tiny_model(), 2);
  const auto before = checksum(other.parameters());
  ema_update(other.parameters(), student.parameters(), 1.0);
  EXPECT_EQ(checksum(other.parameters()), before);
  ema_update(other.parameters(), student.parameters(), 0.0);
  EXPECT_EQ(checksum(other.parameters()), checksum(student.parameters()));
}

TEST(EmaUpdate, ContractsTowardStudent) {
  SegModel student(tiny_model(), 1), teacher(tiny_model(), 2);
  const ParamList s = student.parameters(), t = teacher.parameters();
  std::vector<double> before;
  for (std::size_t k = 0; k < t.size(); ++k) {
    double d = 0;
    for (std::size_t i = 0; i < t[k].var.value().numel(); ++i)
      d += std::pow(t[k].var.value()[i] - s[k].var.value()[i], 2);
    before.push_back(std::sqrt(d));
  }
  ema_update(t, s, 0.9);
  for (std::size_t k = 0; k < t.size(); ++k) {
    double d = 0;
    for (std::size_t i = 0; i < t[k].var.value().numel(); ++i)
      d += std::pow(t[k].var.value()[i] - s[k].var.value()[i], 2);
    EXPECT_NEAR(std::sqrt(d), 0.9 * before[k], 1e-12 * (1 + before[k])) << t[k].name;
  }
}

TEST(EmaUpdate, RejectsMismatches) {
  auto t = scalar_params(1.0);
  ParamList renamed{{"q", make_param(Tensor(Shape{1}, 1.0))}};
  ParamList reshaped{{"p", make_param(Tensor(Shape{2}, 1.0))}};
  EXPECT_THROW(ema_update(t, renamed, 0.5), std::invalid_argument);
  EXPECT_THROW(ema_update(t, reshaped, 0.5), std::invalid_argument);
  EXPECT_THROW(ema_update(t, {}, 0.5), std::invalid_argument);
  EXPECT_THROW(ema_update(t, scalar_params(1.0), 1.5), std::invalid_argument);
}

TEST(Teacher, StartsAsExactCopyAndNeedsNoGrad) {
  SegModel student(tiny_model(), 5);
  Teacher teacher(student, 0.99);
  EXPECT_EQ(checksum(teacher.model().parameters()), checksum(student.parameters()));
  for (const auto &p : teacher.model().parameters())
    EXPECT_FALSE(p.var.requires_grad()) << p.name;
}

TEST(Teacher, UpdateMatchesClosedFormAfterRepeatedSteps) {
  SegModel student(tiny_model(), 5);
  Teacher teacher(student, 0.9);
  const ParamList tp = teacher.model().parameters();
  std::vector<Tensor> start;
  for (const auto &p : tp)
    start.push_back(p.var.value());
  // Move the student once, then hold it fixed.
  for (const auto &p : student.parameters()) {
    ag::Var v = p.var;
    for (std::size_t i = 0; i < v.value().numel(); ++i)
      v.mutable_value()[i] += 0.5;
  }
  const int n = 25;
  for (int k = 0; k < n; ++k)
    teacher.update(student);
  const ParamList sp = student.parameters();
  for (std::size_t k = 0; k < tp.size(); ++k)
    for (std::size_t i = 0; i < tp[k].var.value().numel(); ++i) {
      const double p = sp[k].var.value()[i];
      EXPECT_NEAR(tp[k].var.value()[i], p + std::pow(0.9, n) * (start[k][i] - p), 1e-10);
    }
}

TEST(Teacher, PseudoLabelingLeavesNoGradientOrGraph) {
  SegModel student(tiny_model(), 5);
  Teacher teacher(student, 0.99);
  Rng rng(1);
  Tensor x(Shape{2, 3, 16, 16});
  for (std::size_t i = 0; i < x.numel(); ++i)
    x[i] = rng.uniform();
  const auto pl = teacher.pseudo_label(x, 0.968);
  ASSERT_EQ(pl.size(), 2u);
  EXPECT_EQ(pl[0].labels.height, 16);
  for (const auto &p : teacher.model().parameters())
    EXPECT_TRUE(p.var.grad().empty());
}

TEST(PseudoLabel, QualityCountsStrictExceedances) {
  const Tensor logits = logits_with_confidences({0.99, 0.95, 0.97, 0.50}, 2, 2);
  const PseudoLabel pl = pseudo_label_from_logits(logits, 0, 0.968);
  EXPECT_EQ(pl.q, 0.5);
  EXPECT_NEAR(pl.confidence.values[0], 0.99, 1e-12);
  EXPECT_NEAR(pl.confidence.values[3], 0.50, 1e-12);
  Grid<double> conf(1, 2);
  conf.values = {0.968, 0.9680001};
  EXPECT_EQ(quality(conf, 0.968), 0.5);
}

TEST(PseudoLabel, UniformAndSaturatedLogits) {
  const PseudoLabel uniform = pseudo_label_from_logits(Tensor(Shape{1, 6, 4, 4}, 0.3), 0, 0.968);
  EXPECT_EQ(uniform.q, 0.0);
  for (double c : uniform.confidence.values)
    EXPECT_NEAR(c, 1.0 / 6.0, 1e-15);
  // Ties go to class 0.
  for (auto l : uniform.labels.values)
    EXPECT_EQ(l, 0);

  Tensor sat(Shape{1, 6, 4, 4}, 0.0);
  for (int i = 0; i < 16; ++i)
    sat.at(0, i % 6, i / 4, i % 4) = 50.0;
  const PseudoLabel pl = pseudo_label_from_logits(sat, 0, 0.968);
  EXPECT_EQ(pl.q, 1.0);
  for (int i = 0; i < 16; ++i)
    EXPECT_EQ(pl.labels.values[i], i % 6);
}

TEST(PseudoLabel, MatchesBruteForceSoftmax) {
  Rng rng(9);
  const Tensor logits = test::random_tensor(Shape{2, 4, 3, 5}, rng, 3.0);
  for (int b = 0; b < 2; ++b) {
    const PseudoLabel pl = pseudo_label_from_logits(logits, b, 0.6);
    int confident = 0;
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 5; ++x) {
        double z = 0, best = -1;
        int arg = 0;
        for (int c = 0; c < 4; ++c)
          z += std::exp(logits.at(b, c, y, x));
        for (int c = 0; c < 4; ++c) {
          const double p = std::exp(logits.at(b, c, y, x)) / z;
          if (p > best) {
            best = p;
            arg = c;
          }
        }
        EXPECT_EQ(pl.labels.at(y, x), arg);
        EXPECT_NEAR(pl.confidence.at(y, x), best, 1e-12);
        confident += best > 0.6;
      }
    EXPECT_DOUBLE_EQ(pl.q, confident / 15.0);
  }
}

TEST(PixelWeights, FollowTheMask) {
  EXPECT_EQ(pixel_weights(BinaryMask(2, 2, 1), 0.3), std::vector<double>(4, 1.0));
  EXPECT_EQ(pixel_weights(BinaryMask(2, 2, 0), 0.3), std::vector<double>(4, 0.3));
  BinaryMask m(1, 2);
  m.values = {1, 0};
  EXPECT_EQ(pixel_weights(m, 0.5), (std::vector<double>{1.0, 0.5}));
}

} // namespace
