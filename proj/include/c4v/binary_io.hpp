#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "c4v/errors.hpp"

// Little-endian primitives shared by the checkpoint and segment-cache formats.
namespace c4v::binary {

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
      std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    std::memcpy(&v, bytes, sizeof(T));
  }
  return v;
}

template <typename T>
void write(std::ostream& os, T v) {
  v = byteswap_if_big(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void write_f64s(std::ostream& os, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) {
      write(os, v);
    }
  }
}

inline void write_string(std::ostream& os, const std::string& s) {
  write<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

/// Bounds-checked reader over an in-memory buffer; every overrun throws
/// FormatError so callers can parse fully before mutating any state.
class Reader {
 public:
  explicit Reader(std::span<const char> data, std::string what) : data_(data), what_(std::move(what)) {}

  template <typename T>
  T read() {
    T v;
    take(&v, sizeof(T));
    return byteswap_if_big(v);
  }

  std::vector<double> read_f64s(std::size_t count) {
    if (count > remaining() / sizeof(double)) {
      throw FormatError(what_ + ": truncated payload");
    }
    std::vector<double> out(count);
    take(out.data(), count * sizeof(double));
    if constexpr (std::endian::native == std::endian::big) {
      for (auto& v : out) {
        v = byteswap_if_big(v);
      }
    }
    return out;
  }

  std::string read_string(std::size_t max_length = 1u << 24) {
    const auto n = read<std::uint32_t>();
    if (n > max_length || n > remaining()) {
      throw FormatError(what_ + ": truncated or oversized string");
    }
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic(const char (&magic)[5]) {
    char got[4];
    take(got, 4);
    if (std::memcmp(got, magic, 4) != 0) {
      throw FormatError(what_ + ": bad magic, expected " + std::string(magic, 4));
    }
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void take(void* dst, std::size_t n) {
    if (n > remaining()) {
      throw FormatError(what_ + ": unexpected end of data");
    }
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }

  std::span<const char> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::string& path);

} // namespace c4v::binary
