#pragma once

#include <cstdint>
#include <vector>

#include "gtseg/data_synth.hpp"
#include "gtseg/trainer.hpp"

// The small-scale benchmark used for method comparisons: a clean source
// domain, a photometrically shifted target domain and a held-out target
// validation split.
namespace gtseg::desk {

inline constexpr std::uint64_t kSourceSeed = 1;
inline constexpr std::uint64_t kTargetSeed = 2;
// Validation scenes start far past any training index.
inline constexpr int kValFirst = 100000;
inline constexpr int kTrainCount = 500;
inline constexpr int kValCount = 100;

synth::DomainShift target_shift();

struct Data {
  std::vector<LabeledImage> source;     // labeled
  std::vector<LabeledImage> target;     // labels unused for training
  std::vector<LabeledImage> target_val; // held out
};

Data make_data(int train_count = kTrainCount, int val_count = kValCount);

// Benchmark training configuration; identical to configs/desk.json.
TrainConfig config(Method method, std::uint64_t seed);

} // namespace gtseg::desk
