#pragma once

#include <vector>

#include "gtseg/image.hpp"
#include "gtseg/rng.hpp"

// ClassMix-style cross-domain mixing: half of the source classes are pasted
// onto a target image, labels follow the same mask.
namespace gtseg::mixing {

struct ClassMask {
  BinaryMask mask;          // 1 = pixel taken from the source image
  std::vector<int> classes; // sorted sampled class ids
};

struct ClassMixBatch {
  Image mixed_image;
  LabelMap mixed_labels;
  ClassMask mask;
  BinaryMask mask_scale; // block-majority downsampled mask
  double source_ratio = 0.0;
};

// Distinct non-ignore class ids, ascending.
std::vector<int> present_classes(const LabelMap &labels);

// Draws ceil(K/2) of the K present classes without replacement.
// Throws std::invalid_argument("no valid classes") when K == 0.
std::vector<int> sample_classes(const LabelMap &source_labels, Rng &rng);

// Indicator of source_labels in classes; ignore pixels map to 0.
ClassMask build_mask(const LabelMap &source_labels, const std::vector<int> &classes);

double source_ratio(const BinaryMask &mask);

// Cell (u, v) is 1 iff strictly more than half of its stride x stride block
// is source; exact ties go to the target.
BinaryMask downsample_mask(const BinaryMask &mask, int stride);

ClassMixBatch mix(const Image &source, const LabelMap &source_labels, const Image &target,
                  const LabelMap &target_pseudo, const ClassMask &mask, int stride = 8);

} // namespace gtseg::mixing
