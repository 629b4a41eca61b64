#include "gtseg/image.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gtseg {

void validate_labeled_image(const LabeledImage &item, int num_classes) {
  const Image &img = item.image;
  if (img.pixels.size() != static_cast<std::size_t>(img.height) * img.width * 3)
    throw std::invalid_argument("image pixel buffer does not match its size");
  if (!item.labels.same_size(img.height, img.width) || item.labels.size() != static_cast<std::size_t>(img.height) * img.width)
    throw std::invalid_argument("label map shape does not match image shape");
  for (double v : img.pixels)
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw std::invalid_argument("image pixel outside [0,1]");
  for (std::uint8_t y : item.labels.values)
    if (y != kIgnore && y >= num_classes)
      throw std::invalid_argument("label value " + std::to_string(y) + " outside 0.." + std::to_string(num_classes - 1));
}

Tensor images_to_batch(std::span<const Image> images) {
  if (images.empty())
    throw std::invalid_argument("images_to_batch: empty batch");
  const int h = images[0].height, w = images[0].width;
  Tensor out(Shape{static_cast<int>(images.size()), 3, h, w});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image &img = images[b];
    if (img.height != h || img.width != w)
      throw std::invalid_argument("images_to_batch: images differ in size");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          out.at(static_cast<int>(b), c, y, x) = img.at(y, x, c);
  }
  return out;
}

Tensor images_to_batch(std::span<const LabeledImage> items) {
  std::vector<Image> images;
  images.reserve(items.size());
  for (const auto &item : items)
    images.push_back(item.image);
  return images_to_batch(images);
}

std::vector<std::uint8_t> labels_to_batch(std::span<const LabelMap> labels) {
  std::vector<std::uint8_t> out;
  for (const auto &l : labels)
    out.insert(out.end(), l.values.begin(), l.values.end());
  return out;
}

} // namespace gtseg
