#pragma once

#include <vector>

#include "gtseg/image.hpp"
#include "gtseg/segmodel.hpp"

// Mean-teacher machinery: EMA weights, pseudo-labels and their quality weights.
namespace gtseg::selftrain {

struct PseudoLabel {
  LabelMap labels;        // per-pixel argmax of the teacher softmax
  Grid<double> confidence; // per-pixel max softmax probability
  double q = 0.0;         // fraction of pixels with confidence > tau
};

// teacher' = alpha * teacher + (1 - alpha) * student, elementwise.
// Throws std::invalid_argument on name or shape mismatch.
void ema_update(const ParamList &teacher, const ParamList &student, double alpha);

// Frozen copy of the student, updated only through ema_update.
class Teacher {
public:
  Teacher(const SegModel &student, double alpha);

  void update(const SegModel &student) { ema_update(model_.parameters(), student.parameters(), alpha_); }
  // Runs without recording gradients.
  std::vector<PseudoLabel> pseudo_label(const Tensor &images, double tau);

  SegModel &model() { return model_; }
  const SegModel &model() const { return model_; }
  double alpha() const { return alpha_; }

private:
  SegModel model_;
  double alpha_;
};

// Pseudo-label of image b from a logits batch [N, C, H, W]. Argmax ties go
// to the lowest class id.
PseudoLabel pseudo_label_from_logits(const Tensor &logits, int b, double tau);

// Strict threshold: counts confidence > tau.
double quality(const Grid<double> &confidence, double tau);

// w = 1 on source pixels (M = 1), q on target pixels.
std::vector<double> pixel_weights(const BinaryMask &mask, double q);

} // namespace gtseg::selftrain
