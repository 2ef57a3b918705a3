#include "c4v/wav_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "c4v/binary_io.hpp"
#include "c4v/errors.hpp"

namespace c4v {

namespace binary {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace binary

Waveform read_wav(const std::string& path) {
  const auto bytes = binary::read_file(path);
  binary::Reader r(bytes, path);
  r.expect_magic("RIFF");
  r.read<std::uint32_t>();
  r.expect_magic("WAVE");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    char id[4];
    for (auto& c : id) {
      c = static_cast<char>(r.read<std::uint8_t>());
    }
    const auto size = r.read<std::uint32_t>();
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) {
        throw FormatError(path + ": short fmt chunk");
      }
      format = r.read<std::uint16_t>();
      channels = r.read<std::uint16_t>();
      rate = r.read<std::uint32_t>();
      r.read<std::uint32_t>(); // byte rate
      r.read<std::uint16_t>(); // block align
      bits = r.read<std::uint16_t>();
      for (std::uint32_t i = 16; i < size; ++i) {
        r.read<std::uint8_t>();
      }
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) {
        throw FormatError(path + ": data chunk before fmt chunk");
      }
      if (format != 1 || bits != 16 || (channels != 1 && channels != 2)) {
        throw FormatError(path + ": only 16-bit PCM mono/stereo is supported");
      }
      if (size > r.remaining()) {
        throw FormatError(path + ": truncated data chunk");
      }
      const auto frames = size / (2u * channels);
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(frames);
      for (std::uint32_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c) {
          acc += static_cast<double>(r.read<std::int16_t>()) / 32768.0;
        }
        w.samples[f] = acc / channels;
      }
      if (w.samples.empty()) {
        throw FormatError(path + ": no samples");
      }
      return w;
    } else {
      for (std::uint32_t i = 0; i < size + (size & 1u); ++i) {
        r.read<std::uint8_t>();
      }
    }
  }
  throw FormatError(path + ": no data chunk");
}

void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  binary::write<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  binary::write<std::uint32_t>(out, 16);
  binary::write<std::uint16_t>(out, 1);
  binary::write<std::uint16_t>(out, 1);
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate));
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  binary::write<std::uint16_t>(out, 2);
  binary::write<std::uint16_t>(out, 16);
  out.write("data", 4);
  binary::write<std::uint32_t>(out, data_bytes);
  for (double s : w.samples) {
    const double clipped = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::clamp(std::lround(clipped * 32767.0), -32768L, 32767L));
    binary::write<std::int16_t>(out, q);
  }
  if (!out) {
    throw IoError("failed writing " + path);
  }
}

} // namespace c4v
