#include "c4v/image_io.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "c4v/binary_io.hpp"
#include "c4v/errors.hpp"

namespace c4v {

void write_ppm(const std::string& path, const Image& image) {
  if (image.pixels.size() != image.width * image.height * 3) {
    throw std::invalid_argument("write_ppm: pixel count does not match the size");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) {
    throw IoError("failed writing " + path);
  }
}

Image read_ppm(const std::string& path) {
  const auto bytes = binary::read_file(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    std::size_t v = 0;
    const auto start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > (1u << 20)) throw FormatError(path + ": implausible PPM header value");
      ++pos;
    }
    if (pos == start) throw FormatError(path + ": malformed PPM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw FormatError(path + ": not a binary PPM");
  }
  pos = 2;
  Image img;
  img.width = number();
  img.height = number();
  if (number() != 255) {
    throw FormatError(path + ": only maxval 255 is supported");
  }
  ++pos; // single whitespace before the raster
  const auto n = img.width * img.height * 3;
  if (pos + n > bytes.size()) {
    throw FormatError(path + ": truncated raster");
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

double normalize_pixel(std::uint8_t v) { return static_cast<double>(v) / 127.5 - 1.0; }

} // namespace c4v
