#include "gtseg/selftrain.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace gtseg::selftrain {

void ema_update(const ParamList &teacher, const ParamList &student, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("ema_update: alpha must be in [0,1]");
  if (teacher.size() != student.size())
    throw std::invalid_argument("ema_update: teacher has " + std::to_string(teacher.size()) +
                                " parameters, student " + std::to_string(student.size()));
  std::unordered_map<std::string, const ag::Var *> index;
  for (const auto &p : student)
    index[p.name] = &p.var;
  for (const auto &p : teacher) {
    auto it = index.find(p.name);
    if (it == index.end())
      throw std::invalid_argument("ema_update: student has no parameter " + p.name);
    const Tensor &s = it->second->value();
    ag::Var t = p.var;
    Tensor &tv = t.mutable_value();
    if (!tv.same_shape(s))
      throw std::invalid_argument("ema_update: shape mismatch for " + p.name);
    for (std::size_t i = 0; i < tv.numel(); ++i)
      tv[i] = alpha * tv[i] + (1.0 - alpha) * s[i];
  }
}

Teacher::Teacher(const SegModel &student, double alpha) : model_(student.config(), 0), alpha_(alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("Teacher: alpha must be in [0,1]");
  copy_parameters(student.parameters(), model_.parameters());
  for (const auto &p : model_.parameters()) {
    ag::Var v = p.var;
    v.set_requires_grad(false);
  }
}

std::vector<PseudoLabel> Teacher::pseudo_label(const Tensor &images, double tau) {
  ag::NoGradGuard guard;
  const ag::Var logits = model_.forward(ag::Var(images));
  std::vector<PseudoLabel> out;
  for (int b = 0; b < images.dim(0); ++b)
    out.push_back(pseudo_label_from_logits(logits.value(), b, tau));
  return out;
}

PseudoLabel pseudo_label_from_logits(const Tensor &logits, int b, double tau) {
  if (logits.rank() != 4 || b < 0 || b >= logits.dim(0))
    throw std::invalid_argument("pseudo_label_from_logits: bad logits shape or batch index");
  const int c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  PseudoLabel pl;
  pl.labels = LabelMap(h, w);
  pl.confidence = Grid<double>(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = 0;
      double mx = logits.at(b, 0, y, x);
      for (int ch = 1; ch < c; ++ch) {
        const double v = logits.at(b, ch, y, x);
        if (v > mx) {
          mx = v;
          best = ch;
        }
      }
      double sum = 0.0;
      for (int ch = 0; ch < c; ++ch)
        sum += std::exp(logits.at(b, ch, y, x) - mx);
      pl.labels.at(y, x) = static_cast<std::uint8_t>(best);
      pl.confidence.at(y, x) = 1.0 / sum;
    }
  pl.q = quality(pl.confidence, tau);
  return pl;
}

double quality(const Grid<double> &confidence, double tau) {
  if (confidence.size() == 0)
    throw std::invalid_argument("quality: empty confidence map");
  std::size_t above = 0;
  for (double v : confidence.values)
    above += v > tau ? 1 : 0;
  return static_cast<double>(above) / static_cast<double>(confidence.size());
}

std::vector<double> pixel_weights(const BinaryMask &mask, double q) {
  if (!(q >= 0.0 && q <= 1.0))
    throw std::invalid_argument("pixel_weights: q must be in [0,1]");
  std::vector<double> w(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    w[i] = mask.values[i] ? 1.0 : q;
  return w;
}

} // namespace gtseg::selftrain
