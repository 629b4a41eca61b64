#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gtseg/image.hpp"

// Procedural "ShapeWorld" scenes: a sky band, a road, and a handful of boxes,
// disks and poles over a background. Geometry comes from generate_scene;
// render_domain applies a purely photometric domain shift on top of it.
namespace gtseg::synth {

enum ClassId : std::uint8_t { kBackground = 0, kSky = 1, kRoad = 2, kBox = 3, kDisk = 4, kPole = 5 };
inline constexpr int kMaxClasses = 6;
const char *class_name(int id);

struct SceneSpec {
  std::uint64_t rng_seed = 0;
  int num_classes = 6;
  int image_size = 64;
  int min_objects = 2;
  int max_objects = 6;

  void validate() const;
};

struct DomainShift {
  double hue_shift = 0.0;        // fraction of a full hue turn, [0, 1]
  double brightness_scale = 1.0; // > 0
  double texture_noise_std = 0.0;

  void validate() const;
  bool is_identity() const { return hue_shift == 0.0 && brightness_scale == 1.0 && texture_noise_std == 0.0; }
};

// Shared geometry plus the un-shifted appearance of a scene.
struct SceneLayout {
  LabelMap labels;
  Image base;                   // unquantized source-domain colors
  std::uint64_t noise_seed = 0; // drives the per-pixel texture noise of render_domain
};

// Deterministic in (spec.rng_seed, index). Throws std::invalid_argument for
// an invalid spec (including image_size not divisible by 8) or index < 0.
SceneLayout generate_scene(const SceneSpec &spec, int index);

// Applies hue rotation, brightness scaling and Gaussian texture noise, then
// clamps to [0,1] and quantizes to 8 bits. Labels are copied unchanged.
LabeledImage render_domain(const SceneLayout &layout, const DomainShift &shift);

// Convenience: render scenes [first, first + count) under one shift.
std::vector<LabeledImage> generate_domain(const SceneSpec &spec, const DomainShift &shift, int first, int count);

struct DatasetMeta {
  std::string domain = "source";
  SceneSpec spec;
  DomainShift shift;
};

// Layout: DIR/meta.json, DIR/images/<split>/<index:06>.png (RGB),
// DIR/labels/<split>/<index:06>.png (gray). Writing a split records its
// size in meta.json; other splits already listed there are kept.
void write_dataset(const std::filesystem::path &dir, const DatasetMeta &meta, const std::string &split,
                   const std::vector<LabeledImage> &images);
DatasetMeta read_dataset_meta(const std::filesystem::path &dir);
// Throws IoError naming the offending file for missing/corrupt files and
// out-of-range label values.
std::vector<LabeledImage> read_dataset(const std::filesystem::path &dir, const std::string &split);
std::vector<std::string> dataset_splits(const std::filesystem::path &dir);

} // namespace gtseg::synth
