#pragma once

#include <string>
#include <vector>

#include "gtseg/checkpoint.hpp"
#include "gtseg/params.hpp"

namespace gtseg {

struct ParamGroup {
  std::string name;
  ParamList params;
  double lr = 1e-3;
  double weight_decay = 0.0;
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay:
//   p <- p - lr * wd * p
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
// Parameters without a gradient this step are skipped entirely.
class AdamW {
public:
  AdamW(std::vector<ParamGroup> groups, AdamWOptions options = {});

  // lr_scale multiplies every group's base learning rate (warmup factor).
  void step(double lr_scale = 1.0);
  void zero_grad();

  const std::vector<ParamGroup> &groups() const { return groups_; }
  long steps() const { return steps_; }
  bool owns(const ag::Var &v) const;

  void save(Archive &archive, const std::string &prefix) const;
  void load(const Archive &archive, const std::string &prefix);

private:
  struct Moments {
    Tensor m, v;
    long count = 0;
  };
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<Moments>> state_;
  AdamWOptions options_;
  long steps_ = 0;
};

// Linear warmup from lr/warmup_steps to lr, constant afterwards.
double warmup_factor(int step, int warmup_steps);

} // namespace gtseg
