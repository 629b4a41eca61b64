#include "gtseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace gtseg {

namespace {

void write_png(const std::filesystem::path &path, int height, int width, std::uint32_t format,
               const std::uint8_t *buffer) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buffer, 0, nullptr))
    throw IoError("cannot write " + path.string() + ": " + img.message);
}

std::vector<std::uint8_t> read_png(const std::filesystem::path &path, std::uint32_t format, int &height, int &width) {
  if (!std::filesystem::exists(path))
    throw IoError("missing file " + path.string());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("corrupt PNG " + path.string() + ": " + img.message);
  img.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("corrupt PNG " + path.string() + ": " + msg);
  }
  height = static_cast<int>(img.height);
  width = static_cast<int>(img.width);
  return buffer;
}

} // namespace

std::uint8_t quantize_unit(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

double dequantize_unit(std::uint8_t v) { return static_cast<double>(v) / 255.0; }

void write_png_rgb8(const std::filesystem::path &path, int height, int width, std::span<const std::uint8_t> rgb) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3)
    throw std::invalid_argument("write_png_rgb8: buffer size mismatch for " + path.string());
  write_png(path, height, width, PNG_FORMAT_RGB, rgb.data());
}

void write_png_image(const std::filesystem::path &path, const Image &image) {
  std::vector<std::uint8_t> bytes(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), bytes.begin(), quantize_unit);
  write_png_rgb8(path, image.height, image.width, bytes);
}

void write_png_labels(const std::filesystem::path &path, const LabelMap &labels) {
  write_png(path, labels.height, labels.width, PNG_FORMAT_GRAY, labels.values.data());
}

Image read_png_image(const std::filesystem::path &path) {
  int h = 0, w = 0;
  auto bytes = read_png(path, PNG_FORMAT_RGB, h, w);
  Image img(h, w);
  std::transform(bytes.begin(), bytes.end(), img.pixels.begin(), dequantize_unit);
  return img;
}

LabelMap read_png_labels(const std::filesystem::path &path) {
  int h = 0, w = 0;
  auto bytes = read_png(path, PNG_FORMAT_GRAY, h, w);
  LabelMap labels(h, w);
  labels.values = std::move(bytes);
  return labels;
}

} // namespace gtseg
