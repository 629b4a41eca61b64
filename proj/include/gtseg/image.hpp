#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gtseg/tensor.hpp"

namespace gtseg {

inline constexpr std::uint8_t kIgnore = 255;

// Row-major 2-D grid of cells.
template <typename T> struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(int h, int w, T fill = T{}) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  T &at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  const T &at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
  bool same_size(int h, int w) const { return height == h && width == w; }

  friend bool operator==(const Grid &, const Grid &) = default;
};

// Class ids per pixel, kIgnore for unlabeled pixels.
using LabelMap = Grid<std::uint8_t>;
// 1 marks a source pixel, 0 a target pixel.
using BinaryMask = Grid<std::uint8_t>;

// RGB image, interleaved HWC, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0.0) {}

  double &at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  friend bool operator==(const Image &, const Image &) = default;
};

struct LabeledImage {
  Image image;
  LabelMap labels;

  friend bool operator==(const LabeledImage &, const LabeledImage &) = default;
};

// Throws std::invalid_argument if pixels are non-finite or outside [0,1],
// labels fall outside {0..num_classes-1, kIgnore}, or shapes disagree.
void validate_labeled_image(const LabeledImage &item, int num_classes);

// Stacks images into an NCHW tensor.
Tensor images_to_batch(std::span<const Image> images);
Tensor images_to_batch(std::span<const LabeledImage> items);
// Concatenates label maps in NHW order.
std::vector<std::uint8_t> labels_to_batch(std::span<const LabelMap> labels);

} // namespace gtseg
