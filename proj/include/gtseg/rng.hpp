#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace gtseg {

// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// mt19937_64 with distribution code written out so that streams are
// reproducible regardless of the standard library's distribution classes.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  int uniform_int(int n);
  int uniform_int(int lo, int hi_inclusive) { return lo + uniform_int(hi_inclusive - lo + 1); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Normal truncated to [-2 std, 2 std] by resampling.
  double truncated_normal(double stddev);

  // Fisher-Yates permutation of 0..n-1.
  std::vector<int> permutation(int n);

private:
  std::mt19937_64 engine_;
};

} // namespace gtseg
