#include "gtseg/params.hpp"

#include <cmath>
#include <cstring>

namespace gtseg {

ag::Var make_param(Tensor value) { return ag::Var(std::move(value), true); }

Tensor kaiming_normal(const Shape &shape, int fan_in, Rng &rng) {
  Tensor t(shape);
  const double std = std::sqrt(2.0 / fan_in);
  for (double &v : t.values())
    v = rng.normal(0.0, std);
  return t;
}

Tensor truncated_normal(const Shape &shape, double stddev, Rng &rng) {
  Tensor t(shape);
  for (double &v : t.values())
    v = rng.truncated_normal(stddev);
  return t;
}

std::size_t count_elements(const ParamList &params) {
  std::size_t n = 0;
  for (const auto &p : params)
    n += p.var.value().numel();
  return n;
}

std::uint64_t checksum(const ParamList &params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void *data, std::size_t len) {
    const auto *bytes = static_cast<const unsigned char *>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto &p : params) {
    feed(p.name.data(), p.name.size());
    const Tensor &v = p.var.value();
    feed(v.data(), v.numel() * sizeof(double));
  }
  return h;
}

void zero_grads(const ParamList &params) {
  for (const auto &p : params) {
    ag::Var v = p.var;
    v.zero_grad();
  }
}

} // namespace gtseg
