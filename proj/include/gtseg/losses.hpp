#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gtseg/ops.hpp"
#include "gtseg/selftrain.hpp"

namespace gtseg::losses {

enum class QualityMode {
  scalar,    // one q per image, the fraction of confident teacher pixels
  per_pixel, // 1[confidence_ij > tau] per pixel
};

struct LossConfig {
  double lambda_gt = 1.0;
  double d = 5.0;
  double tau = 0.968;
  int ignore_index = 255;
  // false replaces the adaptive factor with a constant 1.
  bool uncertainty = true;
  QualityMode quality = QualityMode::scalar;

  void validate() const;
};

struct LossBreakdown {
  double l_sup = 0.0;
  double l_mix = 0.0;
  double l_gt = 0.0;
  double beta = 0.0; // batch means of the per-image values
  double q = 0.0;
  double r = 0.0;
  double total = 0.0;
};

// Weighted pixel cross-entropy, mean over non-ignored pixels. weights may be
// empty. Throws std::invalid_argument when every label is ignored.
ag::Var ce_loss(const ag::Var &logits, std::span<const std::uint8_t> labels, std::span<const double> weights = {});

// 1 - exp(-d r).
double beta(double r, double d);

struct GuidanceTerm {
  ag::Var loss;
  double mean_beta = 0.0;
};

// beta(r_i) * q_i * CE(logits_i, pseudo_i) averaged over every pixel of the
// batch. The teacher outputs enter as constants.
GuidanceTerm guidance_loss(const ag::Var &guided_logits, std::span<const selftrain::PseudoLabel> pseudo,
                           std::span<const double> source_ratios, const LossConfig &cfg);

struct Objective {
  ag::Var total;
  LossBreakdown breakdown;
};

// total = L_sup + L_mix + lambda_gt * L_gt. Undefined terms count as zero.
// Throws std::domain_error naming the first non-finite component.
Objective total_loss(const ag::Var &l_sup, const ag::Var &l_mix, const ag::Var &l_gt, const LossConfig &cfg);

} // namespace gtseg::losses
