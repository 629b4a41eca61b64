#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gtseg/checkpoint.hpp"
#include "gtseg/guider.hpp"
#include "gtseg/image.hpp"
#include "gtseg/losses.hpp"
#include "gtseg/optim.hpp"
#include "gtseg/segmodel.hpp"
#include "gtseg/selftrain.hpp"

namespace gtseg {

enum class Method { source_only, dacs, dacs_guidance };

const char *method_name(Method m);
// Throws std::invalid_argument listing the accepted names.
Method parse_method(const std::string &name);

struct TrainConfig {
  double lr_encoder = 6e-5;
  double lr_decoder = 6e-4;
  double lr_guider = 6e-5;
  int batch_size = 2;
  int total_steps = 4000;
  int warmup_steps = -1; // negative: 10% of total_steps
  double alpha = 0.999;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  Method method = Method::dacs_guidance;
  // false keeps the guider out of the optimizer (its weights stay frozen).
  bool train_guider = true;

  int checkpoint_interval = 1000; // 0 disables intermediate checkpoints
  int eval_interval = 500;        // 0 disables intermediate evaluation

  SegModelConfig model;
  GuiderConfig guider; // feature_dim is taken from the model
  losses::LossConfig loss;

  int resolved_warmup() const { return warmup_steps < 0 ? total_steps / 10 : warmup_steps; }
  void validate() const;
};

std::string config_to_json(const TrainConfig &config);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig config_from_json(const std::string &text);
TrainConfig load_config(const std::filesystem::path &path);

// Student, teacher, optional guider and optimizer state for one run.
class Trainer {
public:
  explicit Trainer(TrainConfig config);

  // One update on a source batch and a target batch of equal size.
  losses::LossBreakdown train_step(std::span<const LabeledImage> source, std::span<const Image> target);

  int step() const { return step_; }
  const TrainConfig &config() const { return config_; }
  SegModel &student() { return student_; }
  selftrain::Teacher &teacher() { return teacher_; }
  Guider *guider() { return guider_.get(); }
  const Guider *guider() const { return guider_.get(); }
  AdamW &optimizer() { return *optimizer_; }

  // Full training state: student/, teacher/, guider/, optim/ and meta/.
  Archive checkpoint() const;
  void restore(const Archive &archive);
  // Student weights and config only.
  Archive inference_export() const;

private:
  TrainConfig config_;
  SegModel student_;
  selftrain::Teacher teacher_;
  std::unique_ptr<Guider> guider_;
  std::unique_ptr<AdamW> optimizer_;
  int step_ = 0;
};

// Reconstructs a student from any archive written by Trainer.
SegModel load_student(const Archive &archive);
// Guider from a full checkpoint, or nullptr when it holds none.
std::unique_ptr<Guider> load_guider(const Archive &archive);

struct FitOptions {
  std::filesystem::path out_dir;
  // Resume from out_dir/checkpoint.gtar when present.
  bool resume = false;
  std::span<const LabeledImage> target_val;
  // Stop after this many steps in this invocation (for interrupted runs).
  std::optional<int> stop_after;
  bool verbose = false;
};

struct FitResult {
  int steps_run = 0;
  std::vector<losses::LossBreakdown> history; // rows of this invocation
  std::optional<double> final_miou;           // on target_val, if given
};

// Writes metrics.csv, eval.csv, checkpoint.gtar and model.gtar into out_dir.
// Target labels are never read for training.
FitResult fit(Trainer &trainer, std::span<const LabeledImage> source, std::span<const LabeledImage> target,
              const FitOptions &options);

// Index of the item used at batch slot `slot` of step `step` when cycling
// a dataset of size n in per-epoch shuffled order.
std::size_t sample_index(std::uint64_t seed, std::uint64_t stream, int step, int batch_size, int slot, std::size_t n);

} // namespace gtseg
