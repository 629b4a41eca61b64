#include "gtseg/mixing.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>
#include <string>

namespace gtseg::mixing {

std::vector<int> present_classes(const LabelMap &labels) {
  std::array<bool, 256> seen{};
  for (std::uint8_t y : labels.values)
    seen[y] = true;
  std::vector<int> out;
  for (int c = 0; c < 256; ++c)
    if (seen[c] && c != kIgnore)
      out.push_back(c);
  return out;
}

std::vector<int> sample_classes(const LabelMap &source_labels, Rng &rng) {
  const std::vector<int> present = present_classes(source_labels);
  const int k = static_cast<int>(present.size());
  if (k == 0)
    throw std::invalid_argument("no valid classes");
  const std::vector<int> order = rng.permutation(k);
  std::vector<int> chosen;
  for (int i = 0; i < (k + 1) / 2; ++i)
    chosen.push_back(present[order[i]]);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

ClassMask build_mask(const LabelMap &source_labels, const std::vector<int> &classes) {
  std::array<bool, 256> pick{};
  for (int c : classes) {
    if (c < 0 || c > 255)
      throw std::invalid_argument("build_mask: class id out of range");
    pick[c] = true;
  }
  pick[kIgnore] = false;
  ClassMask out;
  out.classes = classes;
  std::sort(out.classes.begin(), out.classes.end());
  out.mask = BinaryMask(source_labels.height, source_labels.width, 0);
  for (std::size_t i = 0; i < source_labels.size(); ++i)
    out.mask.values[i] = pick[source_labels.values[i]] ? 1 : 0;
  return out;
}

double source_ratio(const BinaryMask &mask) {
  if (mask.size() == 0)
    throw std::invalid_argument("source_ratio: empty mask");
  std::size_t ones = 0;
  for (std::uint8_t m : mask.values)
    ones += m ? 1 : 0;
  return static_cast<double>(ones) / static_cast<double>(mask.size());
}

BinaryMask downsample_mask(const BinaryMask &mask, int stride) {
  if (stride < 1 || mask.height % stride != 0 || mask.width % stride != 0)
    throw std::invalid_argument("downsample_mask: " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                                " mask not divisible by stride " + std::to_string(stride));
  const int h = mask.height / stride, w = mask.width / stride;
  const int half = stride * stride; // compare 2 * count against the block size
  BinaryMask out(h, w, 0);
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v) {
      int count = 0;
      for (int y = u * stride; y < (u + 1) * stride; ++y)
        for (int x = v * stride; x < (v + 1) * stride; ++x)
          count += mask.at(y, x) ? 1 : 0;
      out.at(u, v) = 2 * count > half ? 1 : 0;
    }
  return out;
}

ClassMixBatch mix(const Image &source, const LabelMap &source_labels, const Image &target,
                  const LabelMap &target_pseudo, const ClassMask &mask, int stride) {
  const int h = source.height, w = source.width;
  if (target.height != h || target.width != w || !source_labels.same_size(h, w) || !target_pseudo.same_size(h, w) ||
      !mask.mask.same_size(h, w))
    throw std::invalid_argument("mix: source, target, labels and mask must share one spatial size");
  ClassMixBatch out;
  out.mask = mask;
  out.mixed_image = Image(h, w);
  out.mixed_labels = LabelMap(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool src = mask.mask.at(y, x) != 0;
      for (int c = 0; c < 3; ++c)
        out.mixed_image.at(y, x, c) = src ? source.at(y, x, c) : target.at(y, x, c);
      out.mixed_labels.at(y, x) = src ? source_labels.at(y, x) : target_pseudo.at(y, x);
    }
  out.mask_scale = downsample_mask(mask.mask, stride);
  out.source_ratio = source_ratio(mask.mask);
  return out;
}

} // namespace gtseg::mixing
