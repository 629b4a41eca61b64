#include "gtseg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "gtseg/data_synth.hpp"
#include "gtseg/image_io.hpp"
#include "gtseg/mixing.hpp"

namespace gtseg::eval {

IoUReport::IoUReport(int num_classes) : classes_(num_classes) {
  if (num_classes < 1 || num_classes > 255)
    throw std::invalid_argument("IoUReport: num_classes must be in [1, 255]");
  matrix_.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
}

std::uint64_t IoUReport::confusion(int truth, int pred) const {
  if (truth < 0 || truth >= classes_ || pred < 0 || pred >= classes_)
    throw std::out_of_range("IoUReport: class id out of range");
  return matrix_[static_cast<std::size_t>(truth) * classes_ + pred];
}

std::uint64_t IoUReport::total() const {
  std::uint64_t sum = 0;
  for (std::uint64_t v : matrix_)
    sum += v;
  return sum;
}

std::vector<double> IoUReport::per_class_iou() const {
  std::vector<double> iou(classes_, std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < classes_; ++c) {
    std::uint64_t tp = confusion(c, c), fp = 0, fn = 0;
    for (int k = 0; k < classes_; ++k) {
      if (k == c)
        continue;
      fn += confusion(c, k);
      fp += confusion(k, c);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom > 0)
      iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return iou;
}

double IoUReport::miou() const {
  double sum = 0.0;
  int n = 0;
  for (double v : per_class_iou())
    if (!std::isnan(v)) {
      sum += v;
      ++n;
    }
  return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

void IoUReport::add(int truth, int pred, std::uint64_t count) {
  if (truth < 0 || truth >= classes_ || pred < 0 || pred >= classes_)
    throw std::invalid_argument("IoUReport: class pair (" + std::to_string(truth) + ", " + std::to_string(pred) +
                                ") out of range for " + std::to_string(classes_) + " classes");
  matrix_[static_cast<std::size_t>(truth) * classes_ + pred] += count;
}

void IoUReport::merge(const IoUReport &other) {
  if (other.classes_ != classes_)
    throw std::invalid_argument("IoUReport::merge: class count mismatch");
  for (std::size_t i = 0; i < matrix_.size(); ++i)
    matrix_[i] += other.matrix_[i];
}

std::string IoUReport::to_json(const std::vector<std::string> &class_names) const {
  nlohmann::json j;
  j["num_classes"] = classes_;
  nlohmann::json rows = nlohmann::json::array();
  for (int t = 0; t < classes_; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int p = 0; p < classes_; ++p)
      row.push_back(confusion(t, p));
    rows.push_back(row);
  }
  j["confusion"] = rows;
  nlohmann::json iou = nlohmann::json::array();
  for (double v : per_class_iou())
    iou.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  j["per_class_iou"] = iou;
  if (!class_names.empty())
    j["class_names"] = class_names;
  const double m = miou();
  j["miou"] = std::isnan(m) ? nlohmann::json(nullptr) : nlohmann::json(m);
  return j.dump(2);
}

void accumulate(IoUReport &report, const LabelMap &prediction, const LabelMap &truth) {
  if (!prediction.same_size(truth.height, truth.width))
    throw std::invalid_argument("accumulate: prediction and truth sizes differ");
  const int c = report.num_classes();
  // Validate first so a bad pixel leaves the report untouched.
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth.values[i], p = prediction.values[i];
    if (t == kIgnore)
      continue;
    if (t >= c || p >= c)
      throw std::invalid_argument("accumulate: class id " + std::to_string(t >= c ? t : p) + " out of range for " +
                                  std::to_string(c) + " classes");
  }
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth.values[i] != kIgnore)
      report.add(truth.values[i], prediction.values[i]);
}

namespace {

LabelMap argmax(const Tensor &logits, int b) {
  const int c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const double *base = logits.data() + static_cast<std::size_t>(b) * c * hw;
  LabelMap out(h, w, 0);
  for (std::size_t i = 0; i < hw; ++i) {
    int best = 0;
    for (int k = 1; k < c; ++k)
      if (base[k * hw + i] > base[best * hw + i])
        best = k;
    out.values[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

std::vector<LabelMap> argmax_all(const Tensor &logits) {
  std::vector<LabelMap> out;
  for (int b = 0; b < logits.dim(0); ++b)
    out.push_back(argmax(logits, b));
  return out;
}

} // namespace

std::vector<LabelMap> predict(SegModel &model, std::span<const Image> images, int batch_size) {
  if (batch_size < 1)
    throw std::invalid_argument("predict: batch_size must be positive");
  ag::NoGradGuard no_grad;
  std::vector<LabelMap> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); i += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, images.size() - i);
    const ag::Var logits = model.forward(ag::Var(images_to_batch(images.subspan(i, n))));
    for (LabelMap &m : argmax_all(logits.value()))
      out.push_back(std::move(m));
  }
  return out;
}

IoUReport evaluate(SegModel &model, std::span<const LabeledImage> data, int batch_size) {
  std::vector<Image> images;
  images.reserve(data.size());
  for (const auto &item : data)
    images.push_back(item.image);
  const std::vector<LabelMap> preds = predict(model, images, batch_size);
  IoUReport report(model.config().num_classes);
  for (std::size_t i = 0; i < data.size(); ++i)
    accumulate(report, preds[i], data[i].labels);
  return report;
}

std::array<std::uint8_t, 3> palette_color(int class_id) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{
      {{70, 130, 70}},   // background
      {{70, 130, 180}},  // sky
      {{128, 64, 128}},  // road
      {{220, 20, 60}},   // box
      {{250, 170, 30}},  // disk
      {{153, 153, 153}}, // pole
      {{107, 142, 35}},
      {{0, 0, 142}},
  }};
  if (class_id == kIgnore)
    return {0, 0, 0};
  if (class_id < 0 || class_id >= static_cast<int>(kPalette.size()))
    throw std::invalid_argument("palette_color: no color for class " + std::to_string(class_id));
  return kPalette[class_id];
}

namespace {

// Horizontal strip of equally sized panels.
class PanelStrip {
public:
  PanelStrip(int h, int w, int panels) : h_(h), w_(w), n_(panels), rgb_(static_cast<std::size_t>(h) * w * panels * 3, 0) {}

  void put_image(int slot, const Image &img) {
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x)
        for (int c = 0; c < 3; ++c)
          px(slot, y, x)[c] = quantize_unit(img.at(y, x, c));
  }
  void put_labels(int slot, const LabelMap &labels) {
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        const auto color = palette_color(labels.at(y, x));
        for (int c = 0; c < 3; ++c)
          px(slot, y, x)[c] = color[c];
      }
  }
  void write(const std::filesystem::path &path) const { write_png_rgb8(path, h_, w_ * n_, rgb_); }

private:
  std::uint8_t *px(int slot, int y, int x) {
    return &rgb_[(static_cast<std::size_t>(y) * w_ * n_ + static_cast<std::size_t>(slot) * w_ + x) * 3];
  }
  int h_, w_, n_;
  std::vector<std::uint8_t> rgb_;
};

void write_palette_meta(const std::filesystem::path &path, int num_classes) {
  nlohmann::json j = nlohmann::json::object();
  for (int c = 0; c < num_classes; ++c) {
    const auto color = palette_color(c);
    j["classes"].push_back({{"id", c}, {"name", synth::class_name(c)}, {"rgb", {color[0], color[1], color[2]}}});
  }
  j["ignore_rgb"] = {0, 0, 0};
  j["prediction_panels"] = {"image", "truth", "prediction"};
  j["mix_panels"] = {"mixed image", "decoder on mixed features", "decoder on guider features"};
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

} // namespace

DumpSummary dump_predictions(SegModel &model, const Guider *guider, std::span<const LabeledImage> data,
                             const std::filesystem::path &out_dir, std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec)
    throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  write_palette_meta(out_dir / "palette.json", model.config().num_classes);

  DumpSummary summary;
  std::vector<Image> images;
  for (const auto &item : data)
    images.push_back(item.image);
  const std::vector<LabelMap> preds = predict(model, images);
  char name[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int h = data[i].labels.height, w = data[i].labels.width;
    PanelStrip strip(h, w, 3);
    strip.put_image(0, data[i].image);
    strip.put_labels(1, data[i].labels);
    strip.put_labels(2, preds[i]);
    std::snprintf(name, sizeof name, "pred_%04zu.png", i);
    strip.write(out_dir / name);
    ++summary.prediction_panels;
  }

  if (guider == nullptr) {
    summary.notice = "no guider parameters in checkpoint; mixed-feature panels skipped";
    return summary;
  }
  ag::NoGradGuard no_grad;
  const int stride = model.config().output_stride;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const LabeledImage &src = data[i];
    const LabeledImage &tgt = data[(i + 1) % data.size()];
    Rng rng(mix_seed(seed, i));
    const mixing::ClassMask mask = mixing::build_mask(src.labels, mixing::sample_classes(src.labels, rng));
    const mixing::ClassMixBatch mixed = mixing::mix(src.image, src.labels, tgt.image, tgt.labels, mask, stride);
    const Image batch_images[1] = {mixed.mixed_image};
    const ag::Var features = model.encode(ag::Var(images_to_batch(batch_images)));
    const Tensor plain = model.decode(features).value();
    const Tensor guided = model.decode(guider->reconstruct(features, mixed.mask_scale.values)).value();
    PanelStrip strip(src.labels.height, src.labels.width, 3);
    strip.put_image(0, mixed.mixed_image);
    strip.put_labels(1, argmax(plain, 0));
    strip.put_labels(2, argmax(guided, 0));
    std::snprintf(name, sizeof name, "mix_%04zu.png", i);
    strip.write(out_dir / name);
    ++summary.guider_panels;
  }
  return summary;
}

} // namespace gtseg::eval
