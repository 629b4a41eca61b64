#include "gtseg/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gtseg::losses {

void LossConfig::validate() const {
  if (!(lambda_gt >= 0.0))
    throw std::invalid_argument("LossConfig: lambda_gt must be non-negative");
  if (!(d >= 0.0))
    throw std::invalid_argument("LossConfig: d must be non-negative");
  if (!(tau >= 0.0 && tau <= 1.0))
    throw std::invalid_argument("LossConfig: tau must be in [0,1]");
  if (ignore_index != ops::kIgnoreLabel)
    throw std::invalid_argument("LossConfig: ignore_index is fixed at 255");
}

ag::Var ce_loss(const ag::Var &logits, std::span<const std::uint8_t> labels, std::span<const double> weights) {
  return ops::softmax_cross_entropy(logits, labels, weights);
}

double beta(double r, double d) { return 1.0 - std::exp(-d * r); }

GuidanceTerm guidance_loss(const ag::Var &guided_logits, std::span<const selftrain::PseudoLabel> pseudo,
                           std::span<const double> source_ratios, const LossConfig &cfg) {
  const Shape &s = guided_logits.shape();
  if (s.size() != 4 || static_cast<std::size_t>(s[0]) != pseudo.size() || pseudo.size() != source_ratios.size())
    throw std::invalid_argument("guidance_loss: batch of " + shape_str(s) + " logits needs one pseudo-label and one ratio per image");
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  std::vector<std::uint8_t> labels;
  std::vector<double> weights;
  labels.reserve(pseudo.size() * hw);
  weights.reserve(pseudo.size() * hw);
  GuidanceTerm out;
  for (std::size_t b = 0; b < pseudo.size(); ++b) {
    const selftrain::PseudoLabel &pl = pseudo[b];
    if (!pl.labels.same_size(s[2], s[3]) || !pl.confidence.same_size(s[2], s[3]))
      throw std::invalid_argument("guidance_loss: pseudo-label size does not match logits");
    const double factor = cfg.uncertainty ? beta(source_ratios[b], cfg.d) : 1.0;
    out.mean_beta += factor / static_cast<double>(pseudo.size());
    labels.insert(labels.end(), pl.labels.values.begin(), pl.labels.values.end());
    for (std::size_t i = 0; i < hw; ++i) {
      const double q = cfg.quality == QualityMode::scalar ? pl.q : (pl.confidence.values[i] > cfg.tau ? 1.0 : 0.0);
      weights.push_back(factor * q);
    }
  }
  out.loss = ops::softmax_cross_entropy(guided_logits, labels, weights);
  return out;
}

Objective total_loss(const ag::Var &l_sup, const ag::Var &l_mix, const ag::Var &l_gt, const LossConfig &cfg) {
  auto scalar = [](const ag::Var &v, const char *name) {
    if (!v.defined())
      return 0.0;
    if (v.value().numel() != 1)
      throw std::invalid_argument(std::string("total_loss: ") + name + " is not a scalar");
    const double x = v.value()[0];
    if (!std::isfinite(x))
      throw std::domain_error(std::string("total_loss: non-finite ") + name + " = " + std::to_string(x));
    return x;
  };
  if (!l_sup.defined())
    throw std::invalid_argument("total_loss: L_sup is required");
  Objective out;
  out.breakdown.l_sup = scalar(l_sup, "L_sup");
  out.breakdown.l_mix = scalar(l_mix, "L_mix");
  out.breakdown.l_gt = scalar(l_gt, "L_gt");
  ag::Var total = l_sup;
  if (l_mix.defined())
    total = ops::add(total, l_mix);
  if (l_gt.defined())
    total = ops::add(total, ops::scale(l_gt, cfg.lambda_gt));
  out.total = total;
  out.breakdown.total = total.value()[0];
  if (!std::isfinite(out.breakdown.total))
    throw std::domain_error("total_loss: non-finite total");
  return out;
}

} // namespace gtseg::losses
