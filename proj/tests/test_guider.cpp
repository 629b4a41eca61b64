#include <gtest/gtest.h>

#include "gtseg/guider.hpp"
#include "test_util.hpp"

using namespace gtseg;

namespace {

GuiderConfig toy(int feature_dim = 16) {
  GuiderConfig cfg;
  cfg.feature_dim = feature_dim;
  cfg.embed_dim = 16;
  cfg.num_heads = 2;
  cfg.patch_size = 4;
  return cfg;
}

// Sets every Z1/Z2 entry to small random values so the GIA path is live.
void warm_projections(const Guider &g, Rng &rng) {
  for (const auto &p : g.parameters())
    if (p.name.starts_with("guider/z1") || p.name.starts_with("guider/z2")) {
      ag::Var v = p.var;
      for (std::size_t i = 0; i < v.value().numel(); ++i)
        v.mutable_value()[i] = 0.3 * rng.normal();
    }
}

// Rescales every weight matrix to O(1) entries so finite differences are
// well above rounding noise.
void warm_all(const Guider &g, Rng &rng) {
  for (const auto &p : g.parameters())
    if (p.var.shape().size() >= 2 || p.name == "guider/token") {
      ag::Var v = p.var;
      const double std = 1.0 / std::sqrt(static_cast<double>(v.shape().back() == 1 ? v.shape()[1] : v.shape().back()));
      for (std::size_t i = 0; i < v.value().numel(); ++i)
        v.mutable_value()[i] = std * rng.normal();
    }
}

ag::Var param(const Guider &g, const std::string &name) {
  for (const auto &p : g.parameters())
    if (p.name == name)
      return p.var;
  throw std::runtime_error("no parameter " + name);
}

TEST(Guider, ProjectionsStartAtExactlyZero) {
  Guider g(toy(), 1);
  for (const char *n : {"guider/z1.weight", "guider/z2.weight", "guider/z1.bias", "guider/z2.bias"})
    for (double v : param(g, n).value().values())
      EXPECT_EQ(v, 0.0) << n;
  for (const auto &p : g.parameters())
    EXPECT_TRUE(p.name.starts_with("guider/"));
}

TEST(Guider, InitFeaturesReplacesOnlyMaskedPositions) {
  Guider g(toy(), 2);
  Rng rng(1);
  const ag::Var f(test::random_tensor(Shape{1, 16, 8, 8}, rng));
  std::vector<std::uint8_t> none(64, 0), all(64, 1), one(64, 0);
  one[19] = 1;
  const Tensor t = g.token().value();
  EXPECT_EQ(g.init_features(f, none).value().values()[100], f.value().values()[100]);
  const Tensor a = g.init_features(f, all).value();
  const Tensor s = g.init_features(f, one).value();
  for (int c = 0; c < 16; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        EXPECT_EQ(a.at(0, c, y, x), t[c]);
        EXPECT_EQ(s.at(0, c, y, x), y * 8 + x == 19 ? t[c] : f.value().at(0, c, y, x));
      }
}

TEST(Guider, FreshGuiderIsIdentityOnInitialFeatures) {
  Guider g(toy(), 3);
  Rng rng(2);
  const ag::Var f(test::random_tensor(Shape{2, 16, 8, 8}, rng));
  std::vector<std::uint8_t> mask(128);
  for (auto &m : mask)
    m = rng.uniform() < 0.4;
  const Tensor offset = g.gia_forward(g.init_features(f, mask)).value();
  for (double v : offset.values())
    ASSERT_EQ(v, 0.0);
  const Tensor init = g.init_features(f, mask).value();
  const Tensor rec = g.reconstruct(f, mask).value();
  for (std::size_t i = 0; i < rec.numel(); ++i)
    ASSERT_EQ(rec[i], init[i]);
  const Tensor unmasked = g.reconstruct(f, std::vector<std::uint8_t>(128, 0)).value();
  for (std::size_t i = 0; i < unmasked.numel(); ++i)
    ASSERT_EQ(unmasked[i], f.value()[i]);
}

TEST(Guider, DeskShapeContract) {
  GuiderConfig cfg;
  Guider g(cfg, 4);
  Rng rng(3);
  const ag::Var f(test::random_tensor(Shape{1, 128, 8, 8}, rng));
  EXPECT_EQ(g.reconstruct(f, std::vector<std::uint8_t>(64, 0)).shape(), (Shape{1, 128, 8, 8}));
  EXPECT_EQ(param(g, "guider/embed.weight").shape(), (Shape{512, 4 * 4 * 128}));
  EXPECT_EQ(param(g, "guider/head.weight").shape(), (Shape{4 * 4 * 128, 512}));
}

TEST(Guider, RejectsBadInputs) {
  Guider g(toy(), 5);
  EXPECT_THROW(g.reconstruct(ag::Var(Tensor(Shape{1, 16, 6, 6})), std::vector<std::uint8_t>(36, 0)),
               std::invalid_argument);
  EXPECT_THROW(g.reconstruct(ag::Var(Tensor(Shape{1, 8, 8, 8})), std::vector<std::uint8_t>(64, 0)),
               std::invalid_argument);
  EXPECT_THROW(g.reconstruct(ag::Var(Tensor(Shape{1, 16, 8, 8})), std::vector<std::uint8_t>(10, 0)),
               std::invalid_argument);
  GuiderConfig bad = toy();
  bad.num_heads = 3;
  EXPECT_THROW(Guider(bad, 1), std::invalid_argument);
}

TEST(Guider, PositionalEncodingBreaksPermutationSymmetry) {
  for (PositionalEncoding kind : {PositionalEncoding::factorized_2d, PositionalEncoding::raster_1d}) {
    GuiderConfig cfg = toy();
    cfg.positional_encoding = kind;
    Guider g(cfg, 6);
    Rng rng(4);
    warm_projections(g, rng);
    // Two token positions (left and right 4x4 patches of a 4x8 map) swapped.
    const Tensor f = test::random_tensor(Shape{1, 16, 4, 8}, rng);
    Tensor swapped = f;
    for (int c = 0; c < 16; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
          std::swap(swapped.at(0, c, y, x), swapped.at(0, c, y, x + 4));
    const Tensor a = g.gia_forward(ag::Var(f)).value();
    const Tensor b = g.gia_forward(ag::Var(swapped)).value();
    double diff = 0;
    for (int c = 0; c < 16; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
          diff += std::abs(a.at(0, c, y, x) - b.at(0, c, y, x + 4));
    EXPECT_GT(diff, 1e-8);
  }
}

TEST(Guider, SinusoidalTableValues) {
  const Tensor t = sinusoidal_positions(2, 3, 8, PositionalEncoding::factorized_2d);
  EXPECT_EQ(t.shape(), (Shape{6, 8}));
  // Token (row 1, col 2): row half encodes 1, column half encodes 2.
  const int tok = 5;
  EXPECT_NEAR(t[tok * 8 + 0], std::sin(1.0), 1e-15);
  EXPECT_NEAR(t[tok * 8 + 1], std::cos(1.0), 1e-15);
  EXPECT_NEAR(t[tok * 8 + 2], std::sin(1.0 / 100.0), 1e-15);
  EXPECT_NEAR(t[tok * 8 + 4], std::sin(2.0), 1e-15);
  EXPECT_NEAR(t[tok * 8 + 7], std::cos(2.0 / 100.0), 1e-15);
  const Tensor r = sinusoidal_positions(2, 3, 4, PositionalEncoding::raster_1d);
  EXPECT_NEAR(r[5 * 4 + 0], std::sin(5.0), 1e-15);
  EXPECT_NEAR(r[5 * 4 + 3], std::cos(5.0 / 100.0), 1e-15);
}

TEST(Guider, TokenReceivesGradientOnceOutputProjectionMoves) {
  Guider g(toy(), 7);
  Rng rng(5);
  warm_projections(g, rng);
  const ag::Var f(test::random_tensor(Shape{1, 16, 8, 8}, rng));
  std::vector<std::uint8_t> mask(64, 0);
  mask[10] = 1;
  const Tensor coeffs = test::random_tensor(Shape{1, 16, 8, 8}, rng);
  ag::backward(test::probe_sum(g.reconstruct(f, mask), coeffs));
  double norm = 0;
  for (double v : g.token().grad().values())
    norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST(Guider, SkipAblationReturnsOffsetOnly) {
  GuiderConfig cfg = toy();
  cfg.skip_connection = false;
  Guider g(cfg, 8);
  Rng rng(6);
  const ag::Var f(test::random_tensor(Shape{1, 16, 8, 8}, rng));
  std::vector<std::uint8_t> mask(64, 1);
  const Tensor fresh = g.reconstruct(f, mask).value();
  for (double v : fresh.values())
    ASSERT_EQ(v, 0.0);
  warm_projections(g, rng);
  const Tensor a = g.reconstruct(f, mask).value();
  const Tensor b = g.gia_forward(g.init_features(f, mask)).value();
  for (std::size_t i = 0; i < a.numel(); ++i)
    ASSERT_EQ(a[i], b[i]);
}

TEST(Guider, NonZeroInitAblation) {
  GuiderConfig cfg = toy();
  cfg.zero_init_input = cfg.zero_init_output = false;
  Guider g(cfg, 9);
  double norm = 0;
  for (double v : param(g, "guider/z2.weight").value().values())
    norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST(Guider, GradientsMatchFiniteDifferences) {
  Guider g(toy(), 10);
  Rng rng(7);
  warm_all(g, rng);
  const ag::Var f(test::random_tensor(Shape{1, 16, 8, 8}, rng));
  std::vector<std::uint8_t> mask(64, 0);
  for (int i = 0; i < 64; i += 3)
    mask[i] = 1;
  const Tensor coeffs = test::random_tensor(Shape{1, 16, 8, 8}, rng);
  const auto loss = [&] { return test::probe_sum(g.reconstruct(f, mask), coeffs); };
  for (const char *n : {"guider/token", "guider/z1.weight", "guider/z2.weight", "guider/blocks.0.attn.qkv.weight",
                        "guider/blocks.1.mlp.fc1.weight", "guider/embed.weight"}) {
    const auto r = test::check_gradient(loss, param(g, n), 16, rng);
    EXPECT_LE(r.max_rel_error, 1e-4) << n;
  }
}

} // namespace
