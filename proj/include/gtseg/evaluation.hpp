#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gtseg/guider.hpp"
#include "gtseg/image.hpp"
#include "gtseg/segmodel.hpp"

namespace gtseg::eval {

// Confusion matrix with rows indexed by ground truth, columns by prediction.
class IoUReport {
public:
  explicit IoUReport(int num_classes);

  int num_classes() const { return classes_; }
  std::uint64_t confusion(int truth, int pred) const;
  std::uint64_t total() const;

  // NaN for classes that never occur in truth or prediction.
  std::vector<double> per_class_iou() const;
  // Mean over classes with TP + FP + FN > 0; NaN when there are none.
  double miou() const;

  void add(int truth, int pred, std::uint64_t count = 1);
  void merge(const IoUReport &other);

  std::string to_json(const std::vector<std::string> &class_names = {}) const;

private:
  int classes_;
  std::vector<std::uint64_t> matrix_;
};

// Adds one image. Ignore pixels in truth are skipped. Throws
// std::invalid_argument on size mismatch or class ids out of range.
void accumulate(IoUReport &report, const LabelMap &prediction, const LabelMap &truth);

// Argmax prediction of the student, processed batch_size images at a time.
std::vector<LabelMap> predict(SegModel &model, std::span<const Image> images, int batch_size = 8);
IoUReport evaluate(SegModel &model, std::span<const LabeledImage> data, int batch_size = 8);

// Fixed class id -> RGB map used by every rendered panel.
std::array<std::uint8_t, 3> palette_color(int class_id);

struct DumpSummary {
  std::size_t prediction_panels = 0;
  std::size_t guider_panels = 0;
  std::string notice; // set when guider panels were skipped
};

// For each image writes pred_<i>.png: image | truth | prediction. With a
// guider, also writes mix_<i>.png for a mix of image i (source) over image
// i+1 (target): mixed image | D(E(x_m)) | D(G(E(x_m), M)). Writes
// palette.json describing the colors.
DumpSummary dump_predictions(SegModel &model, const Guider *guider, std::span<const LabeledImage> data,
                             const std::filesystem::path &out_dir, std::uint64_t seed = 0);

} // namespace gtseg::eval
