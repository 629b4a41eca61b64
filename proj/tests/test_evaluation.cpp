#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "gtseg/data_synth.hpp"
#include "gtseg/evaluation.hpp"

using namespace gtseg;
using namespace gtseg::eval;
namespace fs = std::filesystem;

namespace {

LabelMap labels(int h, int w, std::vector<std::uint8_t> v) {
  LabelMap m(h, w);
  m.values = std::move(v);
  return m;
}

TEST(IoU, PerfectPredictionIsOne) {
  IoUReport r(6);
  const LabelMap y = labels(2, 3, {0, 1, 2, 3, 4, 5});
  accumulate(r, y, y);
  EXPECT_EQ(r.miou(), 1.0);
  for (int t = 0; t < 6; ++t)
    for (int p = 0; p < 6; ++p)
      EXPECT_EQ(r.confusion(t, p), t == p ? 1u : 0u);
}

TEST(IoU, ConstantPredictionOnHalfAndHalf) {
  IoUReport r(2);
  accumulate(r, labels(2, 2, {0, 0, 0, 0}), labels(2, 2, {0, 0, 1, 1}));
  const auto iou = r.per_class_iou();
  EXPECT_EQ(iou[0], 0.5);
  EXPECT_EQ(iou[1], 0.0);
  EXPECT_EQ(r.miou(), 0.25);
}

TEST(IoU, AbsentClassesAreExcluded) {
  IoUReport r(6);
  accumulate(r, labels(1, 2, {0, 1}), labels(1, 2, {0, 0}));
  const auto iou = r.per_class_iou();
  EXPECT_TRUE(std::isnan(iou[5]));
  EXPECT_EQ(iou[0], 0.5);
  EXPECT_EQ(iou[1], 0.0);
  EXPECT_EQ(r.miou(), 0.25);
  EXPECT_TRUE(std::isnan(IoUReport(3).miou()));
}

TEST(IoU, IgnoreTruthLeavesReportUnchanged) {
  IoUReport r(3);
  accumulate(r, labels(1, 3, {0, 1, 2}), labels(1, 3, {kIgnore, kIgnore, kIgnore}));
  EXPECT_EQ(r.total(), 0u);
  accumulate(r, labels(1, 3, {0, 1, 2}), labels(1, 3, {0, kIgnore, 2}));
  EXPECT_EQ(r.total(), 2u);
}

TEST(IoU, RejectsBadInputs) {
  IoUReport r(3);
  EXPECT_THROW(accumulate(r, labels(1, 2, {0, 1}), labels(1, 3, {0, 1, 2})), std::invalid_argument);
  EXPECT_THROW(accumulate(r, labels(1, 2, {0, 3}), labels(1, 2, {0, 1})), std::invalid_argument);
  EXPECT_THROW(accumulate(r, labels(1, 2, {0, 1}), labels(1, 2, {0, 7})), std::invalid_argument);
  EXPECT_EQ(r.total(), 0u);
}

TEST(IoU, MatchesBruteForceAndIsPermutationInvariant) {
  Rng rng(4);
  const std::vector<int> perm{2, 4, 0, 5, 1, 3};
  for (int trial = 0; trial < 20; ++trial) {
    LabelMap t(8, 8), p(8, 8), tp(8, 8), pp(8, 8);
    std::size_t valid = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      t.values[i] = rng.uniform() < 0.1 ? kIgnore : static_cast<std::uint8_t>(rng.uniform_int(6));
      p.values[i] = static_cast<std::uint8_t>(rng.uniform() < 0.6 ? (t.values[i] == kIgnore ? 0 : t.values[i])
                                                                   : rng.uniform_int(6));
      tp.values[i] = t.values[i] == kIgnore ? kIgnore : static_cast<std::uint8_t>(perm[t.values[i]]);
      pp.values[i] = static_cast<std::uint8_t>(perm[p.values[i]]);
      valid += t.values[i] != kIgnore;
    }
    IoUReport r(6), rp(6);
    accumulate(r, p, t);
    accumulate(rp, pp, tp);
    EXPECT_EQ(r.total(), valid);
    EXPECT_NEAR(r.miou(), rp.miou(), 1e-15);

    double sum = 0;
    int present = 0;
    for (int c = 0; c < 6; ++c) {
      double inter = 0, uni = 0;
      for (std::size_t i = 0; i < 64; ++i) {
        if (t.values[i] == kIgnore)
          continue;
        const bool in_t = t.values[i] == c, in_p = p.values[i] == c;
        inter += in_t && in_p;
        uni += in_t || in_p;
      }
      if (uni > 0) {
        sum += inter / uni;
        ++present;
      }
    }
    EXPECT_NEAR(r.miou(), sum / present, 1e-15);
  }
}

TEST(IoU, MergeEqualsSequentialAccumulation) {
  IoUReport a(3), b(3), both(3);
  const LabelMap x = labels(1, 3, {0, 1, 2}), y = labels(1, 3, {0, 2, 2});
  accumulate(a, x, y);
  accumulate(b, y, x);
  accumulate(both, x, y);
  accumulate(both, y, x);
  a.merge(b);
  for (int t = 0; t < 3; ++t)
    for (int p = 0; p < 3; ++p)
      EXPECT_EQ(a.confusion(t, p), both.confusion(t, p));
  EXPECT_THROW(a.merge(IoUReport(4)), std::invalid_argument);
}

TEST(IoU, JsonUsesNullForUndefinedClasses) {
  IoUReport r(3);
  accumulate(r, labels(1, 2, {0, 1}), labels(1, 2, {0, 1}));
  const auto j = nlohmann::json::parse(r.to_json({"a", "b", "c"}));
  EXPECT_EQ(j["miou"].get<double>(), 1.0);
  EXPECT_TRUE(j["per_class_iou"][2].is_null());
  EXPECT_EQ(j["confusion"][1][1].get<int>(), 1);
}

TEST(Palette, FixedAndDistinct) {
  std::set<std::array<std::uint8_t, 3>> seen;
  for (int c = 0; c < synth::kMaxClasses; ++c)
    seen.insert(palette_color(c));
  EXPECT_EQ(seen.size(), static_cast<std::size_t>(synth::kMaxClasses));
  EXPECT_EQ(palette_color(kIgnore), (std::array<std::uint8_t, 3>{0, 0, 0}));
  EXPECT_EQ(palette_color(2), palette_color(2));
}

class Dump : public ::testing::Test {
protected:
  void SetUp() override {
    SegModelConfig cfg;
    cfg.encoder_channels = {8, 8, 16};
    model = std::make_unique<SegModel>(cfg, 1);
    synth::SceneSpec spec;
    data = synth::generate_domain(spec, synth::DomainShift{}, 0, 5);
  }
  std::unique_ptr<SegModel> model;
  std::vector<LabeledImage> data;
};

std::size_t count_png(const fs::path &dir) {
  std::size_t n = 0;
  for (const auto &e : fs::directory_iterator(dir))
    n += e.path().extension() == ".png";
  return n;
}

TEST_F(Dump, WritesOnePanelPerImageWithoutGuider) {
  const fs::path out = fs::temp_directory_path() / "gtseg_dump_plain";
  fs::remove_all(out);
  const DumpSummary s = dump_predictions(*model, nullptr, data, out);
  EXPECT_EQ(s.prediction_panels, 5u);
  EXPECT_EQ(s.guider_panels, 0u);
  EXPECT_FALSE(s.notice.empty());
  EXPECT_EQ(count_png(out), 5u);
  const auto palette = nlohmann::json::parse(std::ifstream(out / "palette.json"));
  ASSERT_EQ(palette["classes"].size(), 6u);
  const auto rgb = palette_color(3);
  EXPECT_EQ(palette["classes"][3]["rgb"], (nlohmann::json{rgb[0], rgb[1], rgb[2]}));
}

TEST_F(Dump, AddsMixPanelsWithGuider) {
  GuiderConfig gc;
  gc.feature_dim = 16;
  gc.embed_dim = 16;
  gc.num_heads = 2;
  const Guider guider(gc, 3);
  const fs::path out = fs::temp_directory_path() / "gtseg_dump_guider";
  fs::remove_all(out);
  const DumpSummary s = dump_predictions(*model, &guider, data, out);
  EXPECT_EQ(s.prediction_panels, 5u);
  EXPECT_EQ(s.guider_panels, 5u);
  EXPECT_TRUE(s.notice.empty());
  EXPECT_EQ(count_png(out), 10u);
}

TEST_F(Dump, PredictBreaksTiesTowardLowestClass) {
  // A model whose logits are all equal predicts class 0 everywhere.
  for (const auto &p : model->parameter_groups().decoder) {
    ag::Var v = p.var;
    for (std::size_t i = 0; i < v.value().numel(); ++i)
      v.mutable_value()[i] = 0.0;
  }
  std::vector<Image> imgs{data[0].image};
  const auto pred = predict(*model, imgs);
  for (auto l : pred[0].values)
    ASSERT_EQ(l, 0);
}

} // namespace
