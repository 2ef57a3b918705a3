#include "c4v/segment_cache.hpp"

#include <cmath>
#include <fstream>

#include "c4v/binary_io.hpp"
#include "c4v/errors.hpp"

namespace c4v {

namespace {

constexpr std::size_t kPlaneValues = kSegmentFrames * kMelBins;

} // namespace

void write_segment_cache(const std::string& path, const CachedAudio& item) {
  const auto& seg = item.segments;
  if (seg.data.size() != seg.count * kSegmentValues || seg.pad_mask.size() != seg.count) {
    throw std::invalid_argument("write_segment_cache: inconsistent segment layout");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out.write("A4V1", 4);
  binary::write<double>(out, item.duration);
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(seg.count));
  for (auto flag : seg.pad_mask) {
    binary::write<std::uint8_t>(out, flag);
  }
  std::vector<double> plane(seg.count * kPlaneValues);
  for (std::size_t s = 0; s < seg.count; ++s) {
    const auto src = seg.segment(s);
    for (std::size_t i = 0; i < kPlaneValues; ++i) {
      plane[s * kPlaneValues + i] = src[i * kImageChannels];
    }
  }
  binary::write_f64s(out, plane);
  if (!out) {
    throw IoError("failed writing " + path);
  }
}

CachedAudio read_segment_cache(const std::string& path) {
  const auto bytes = binary::read_file(path);
  binary::Reader r(bytes, path);
  r.expect_magic("A4V1");
  CachedAudio item;
  item.duration = r.read<double>();
  if (!std::isfinite(item.duration) || item.duration < 0.0) {
    throw FormatError(path + ": invalid duration");
  }
  const auto count = r.read<std::uint32_t>();
  if (count == 0 || count > 4096) {
    throw FormatError(path + ": implausible segment count");
  }
  item.segments.count = count;
  item.segments.pad_mask.resize(count);
  for (auto& flag : item.segments.pad_mask) {
    flag = r.read<std::uint8_t>();
  }
  const auto plane = r.read_f64s(static_cast<std::size_t>(count) * kPlaneValues);
  if (r.remaining() != 0) {
    throw FormatError(path + ": trailing bytes");
  }
  item.segments.data.resize(static_cast<std::size_t>(count) * kSegmentValues);
  for (std::size_t i = 0; i < plane.size(); ++i) {
    for (std::size_t c = 0; c < kImageChannels; ++c) {
      item.segments.data[i * kImageChannels + c] = plane[i];
    }
  }
  return item;
}

Spectrogram spectrogram_from_cache(const CachedAudio& item) {
  const auto& seg = item.segments;
  const auto samples = static_cast<std::size_t>(std::llround(item.duration * kAudioSampleRate));
  const auto total_frames = (samples + kHopLength - 1) / kHopLength;
  const auto natural = natural_segment_count(total_frames);
  std::size_t kept = 0;
  while (kept < seg.count && !seg.pad_mask[kept]) ++kept;
  for (std::size_t s = kept; s < seg.count; ++s) {
    if (!seg.pad_mask[s]) throw std::invalid_argument("spectrogram_from_cache: pad segments must trail");
  }
  if (kept > natural) {
    throw std::invalid_argument("spectrogram_from_cache: more segments than the duration allows");
  }
  const auto selected = middle_out_selection(natural, kept);
  Spectrogram out;
  out.source_duration = item.duration;
  for (std::size_t k = 0; k < kept; ++k) {
    const auto rows = selected[k] + 1 == natural ? total_frames - (natural - 1) * kSegmentFrames : kSegmentFrames;
    const auto src = seg.segment(k);
    for (std::size_t t = 0; t < rows; ++t) {
      for (std::size_t b = 0; b < kMelBins; ++b) {
        out.values.push_back(src[(t * kMelBins + b) * kImageChannels]);
      }
    }
    out.frames += rows;
  }
  return out;
}

} // namespace c4v
