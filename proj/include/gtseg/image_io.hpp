#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>

#include "gtseg/image.hpp"

namespace gtseg {

// Raised for unreadable, truncated or malformed files; the message names the path.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// 8-bit quantization used for every stored pixel: round(v * 255).
std::uint8_t quantize_unit(double v);
double dequantize_unit(std::uint8_t v);

void write_png_rgb8(const std::filesystem::path &path, int height, int width, std::span<const std::uint8_t> rgb);
void write_png_image(const std::filesystem::path &path, const Image &image);
void write_png_labels(const std::filesystem::path &path, const LabelMap &labels);

Image read_png_image(const std::filesystem::path &path);
LabelMap read_png_labels(const std::filesystem::path &path);

} // namespace gtseg
