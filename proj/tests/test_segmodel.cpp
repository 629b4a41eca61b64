#include <set>

#include <gtest/gtest.h>

#include "gtseg/image.hpp"
#include "gtseg/segmodel.hpp"
#include "test_util.hpp"

using namespace gtseg;

namespace {

SegModelConfig small() {
  SegModelConfig cfg;
  cfg.encoder_channels = {8, 8, 16};
  return cfg;
}

Tensor random_images(int n, int size, Rng &rng) {
  Tensor t(Shape{n, 3, size, size});
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = rng.uniform();
  return t;
}

TEST(SegModel, DeskShapes) {
  SegModel model(SegModelConfig{}, 1);
  Rng rng(1);
  const ag::Var x(random_images(1, 64, rng));
  const ag::Var f = model.encode(x);
  EXPECT_EQ(f.shape(), (Shape{1, 128, 8, 8}));
  const ag::Var logits = model.decode(f);
  EXPECT_EQ(logits.shape(), (Shape{1, 6, 64, 64}));
  EXPECT_TRUE(logits.value().all_finite());
}

TEST(SegModel, RejectsIndivisibleInputAndWrongChannels) {
  SegModel model(small(), 1);
  Rng rng(1);
  EXPECT_THROW(model.encode(ag::Var(random_images(1, 60, rng))), std::invalid_argument);
  EXPECT_THROW(model.decode(ag::Var(Tensor(Shape{1, 8, 2, 2}))), std::invalid_argument);
  EXPECT_THROW(model.encode(ag::Var(Tensor(Shape{1, 1, 16, 16}))), std::invalid_argument);
}

TEST(SegModel, EncodingIsDeterministic) {
  SegModel model(small(), 3);
  Rng rng(2);
  const Tensor x = random_images(2, 16, rng);
  EXPECT_EQ(model.encode(ag::Var(x)).value().values()[5], model.encode(ag::Var(x)).value().values()[5]);
  const Tensor a = model.forward(ag::Var(x)).value(), b = model.forward(ag::Var(x)).value();
  for (std::size_t i = 0; i < a.numel(); ++i)
    ASSERT_EQ(a[i], b[i]);
  EXPECT_EQ(model.encode_calls(), 4u);
}

TEST(SegModel, SameSeedSameWeightsDifferentSeedDifferentWeights) {
  EXPECT_EQ(checksum(SegModel(small(), 4).parameters()), checksum(SegModel(small(), 4).parameters()));
  EXPECT_NE(checksum(SegModel(small(), 4).parameters()), checksum(SegModel(small(), 5).parameters()));
}

TEST(SegModel, ClassPermutationOfHeadPermutesLogits) {
  SegModel model(small(), 6);
  Rng rng(3);
  const Tensor x = random_images(1, 16, rng);
  const Tensor before = model.forward(ag::Var(x)).value();
  const std::vector<int> perm{3, 0, 5, 1, 4, 2};
  for (const auto &p : model.parameter_groups().decoder) {
    ag::Var v = p.var;
    const Tensor orig = v.value();
    const std::size_t per_class = orig.numel() / 6;
    for (int c = 0; c < 6; ++c)
      for (std::size_t j = 0; j < per_class; ++j)
        v.mutable_value()[c * per_class + j] = orig[perm[c] * per_class + j];
  }
  const Tensor after = model.forward(ag::Var(x)).value();
  for (int c = 0; c < 6; ++c)
    for (int y = 0; y < 16; ++y)
      for (int xx = 0; xx < 16; ++xx)
        ASSERT_NEAR(after.at(0, c, y, xx), before.at(0, perm[c], y, xx), 1e-12);
}

TEST(SegModel, ParameterGroupsPartitionTheParameters) {
  SegModel model(SegModelConfig{}, 1);
  const ParamGroups g = model.parameter_groups();
  std::set<std::string> enc, dec, all;
  for (const auto &p : g.encoder)
    enc.insert(p.name);
  for (const auto &p : g.decoder)
    dec.insert(p.name);
  for (const auto &p : model.parameters())
    all.insert(p.name);
  for (const auto &n : enc)
    EXPECT_FALSE(dec.count(n)) << n;
  std::set<std::string> both = enc;
  both.insert(dec.begin(), dec.end());
  EXPECT_EQ(both, all);
  EXPECT_EQ(all.size(), model.parameters().size());
  EXPECT_EQ(g.encoder.size(), SegModel(SegModelConfig{}, 9).parameter_groups().encoder.size());
  EXPECT_EQ(count_elements(g.encoder) + count_elements(g.decoder), count_elements(model.parameters()));
}

TEST(SegModel, ConfigValidation) {
  SegModelConfig cfg;
  cfg.encoder_channels = {8, 16};
  EXPECT_THROW(SegModel(cfg, 1), std::invalid_argument);
  cfg = SegModelConfig{};
  cfg.num_classes = 1;
  EXPECT_THROW(SegModel(cfg, 1), std::invalid_argument);
  cfg = SegModelConfig{};
  cfg.encoder_channels = {8, 12, 16};
  EXPECT_THROW(SegModel(cfg, 1), std::invalid_argument);
}

TEST(SegModel, CopyParametersMakesIdenticalModels) {
  SegModel a(small(), 1), b(small(), 2);
  copy_parameters(a.parameters(), b.parameters());
  EXPECT_EQ(checksum(a.parameters()), checksum(b.parameters()));
  SegModel c(SegModelConfig{}, 1);
  EXPECT_THROW(copy_parameters(a.parameters(), c.parameters()), std::invalid_argument);
}

TEST(SegModel, GradientsMatchFiniteDifferences) {
  SegModel model(small(), 7);
  Rng rng(4);
  const ag::Var x(random_images(2, 16, rng));
  std::vector<std::uint8_t> labels(2 * 16 * 16);
  for (auto &l : labels)
    l = static_cast<std::uint8_t>(rng.uniform_int(6));
  labels[3] = kIgnore;
  const auto loss = [&] { return ops::softmax_cross_entropy(model.forward(x), labels); };
  // 32 parameters spread over every tensor.
  const ParamList params = model.parameters();
  std::size_t total = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::size_t samples = 32 / params.size() + (k < 32 % params.size() ? 1 : 0);
    const auto r = test::check_gradient(loss, params[k].var, samples, rng);
    EXPECT_LE(r.max_rel_error, 1e-4) << params[k].name;
    total += r.checked;
  }
  EXPECT_GE(total, 32u);
}

} // namespace
