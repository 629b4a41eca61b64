#pragma once

#include <string>
#include <vector>

#include "gtseg/autograd.hpp"
#include "gtseg/rng.hpp"

namespace gtseg {

struct NamedParam {
  std::string name;
  ag::Var var;
};

using ParamList = std::vector<NamedParam>;

ag::Var make_param(Tensor value);
// Kaiming-normal init, std = sqrt(2 / fan_in).
Tensor kaiming_normal(const Shape &shape, int fan_in, Rng &rng);
Tensor truncated_normal(const Shape &shape, double stddev, Rng &rng);

std::size_t count_elements(const ParamList &params);
// Order-sensitive FNV-1a digest over names and raw value bits.
std::uint64_t checksum(const ParamList &params);
void zero_grads(const ParamList &params);

} // namespace gtseg
