#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace c4v {

/// 8-bit RGB image, HWC.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Binary PPM (P6, maxval 255).
void write_ppm(const std::string& path, const Image& image);
Image read_ppm(const std::string& path);

/// Maps 0..255 to [-1, 1].
double normalize_pixel(std::uint8_t v);

} // namespace c4v
