#include "gtseg/optim.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

namespace gtseg {

AdamW::AdamW(std::vector<ParamGroup> groups, AdamWOptions options)
    : groups_(std::move(groups)), options_(options) {
  for (const auto &g : groups_) {
    if (!(g.lr > 0.0))
      throw std::invalid_argument("AdamW: group " + g.name + " needs a positive learning rate");
    std::vector<Moments> moments(g.params.size());
    for (std::size_t i = 0; i < g.params.size(); ++i) {
      moments[i].m = Tensor::zeros_like(g.params[i].var.value());
      moments[i].v = Tensor::zeros_like(g.params[i].var.value());
    }
    state_.push_back(std::move(moments));
  }
}

void AdamW::step(double lr_scale) {
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const ParamGroup &g = groups_[gi];
    const double lr = g.lr * lr_scale;
    for (std::size_t pi = 0; pi < g.params.size(); ++pi) {
      ag::Var p = g.params[pi].var;
      const Tensor &grad = p.grad();
      if (grad.empty())
        continue;
      Moments &st = state_[gi][pi];
      ++st.count;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.count));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.count));
      Tensor &value = p.mutable_value();
      const Eigen::Index n = static_cast<Eigen::Index>(value.numel());
      Eigen::Map<Eigen::ArrayXd> x(value.data(), n), m(st.m.data(), n), v(st.v.data(), n);
      const Eigen::Map<const Eigen::ArrayXd> gr(grad.data(), n);
      m = b1 * m + (1.0 - b1) * gr;
      v = b2 * v + (1.0 - b2) * gr * gr;
      x -= lr * g.weight_decay * x;
      x -= lr * (m / c1) / ((v / c2).sqrt() + options_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (const auto &g : groups_)
    zero_grads(g.params);
}

bool AdamW::owns(const ag::Var &v) const {
  for (const auto &g : groups_)
    for (const auto &p : g.params)
      if (p.var.node() == v.node())
        return true;
  return false;
}

void AdamW::save(Archive &archive, const std::string &prefix) const {
  archive.put_tensor(prefix + "steps", Tensor(Shape{1}, static_cast<double>(steps_)));
  for (std::size_t gi = 0; gi < groups_.size(); ++gi)
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      const std::string &name = groups_[gi].params[pi].name;
      const Moments &st = state_[gi][pi];
      archive.put_tensor(prefix + "m/" + name, st.m);
      archive.put_tensor(prefix + "v/" + name, st.v);
      archive.put_tensor(prefix + "count/" + name, Tensor(Shape{1}, static_cast<double>(st.count)));
    }
}

void AdamW::load(const Archive &archive, const std::string &prefix) {
  steps_ = static_cast<long>(archive.get_tensor(prefix + "steps")[0]);
  for (std::size_t gi = 0; gi < groups_.size(); ++gi)
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      const std::string &name = groups_[gi].params[pi].name;
      Moments &st = state_[gi][pi];
      Tensor m = archive.get_tensor(prefix + "m/" + name);
      Tensor v = archive.get_tensor(prefix + "v/" + name);
      if (!m.same_shape(st.m) || !v.same_shape(st.v))
        throw std::invalid_argument("optimizer state shape mismatch for " + name);
      st.m = std::move(m);
      st.v = std::move(v);
      st.count = static_cast<long>(archive.get_tensor(prefix + "count/" + name)[0]);
    }
}

double warmup_factor(int step, int warmup_steps) {
  if (warmup_steps <= 0 || step >= warmup_steps)
    return 1.0;
  return static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
}

} // namespace gtseg
