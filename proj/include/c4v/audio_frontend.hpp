#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace c4v {

inline constexpr int kAudioSampleRate = 16000;
inline constexpr std::size_t kWindowLength = 512; // 32 ms
inline constexpr std::size_t kHopLength = 128;    // 8 ms
inline constexpr std::size_t kFftBins = kWindowLength / 2 + 1;
inline constexpr std::size_t kMelBins = 224;
inline constexpr std::size_t kSegmentFrames = 224;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kSegmentValues = kSegmentFrames * kMelBins * kImageChannels;
inline constexpr double kFrameRate = static_cast<double>(kAudioSampleRate) / kHopLength; // 125
inline constexpr double kLogEnergyFloor = 1e-10;

/// ln(kLogEnergyFloor): the value of a silent cell, also used for masked cells.
double silence_log_energy();

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kAudioSampleRate;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// T x 224 log-Mel energies, time-major.
struct Spectrogram {
  std::size_t frames = 0;
  std::vector<double> values;
  double source_duration = 0.0;

  double at(std::size_t frame, std::size_t bin) const { return values[frame * kMelBins + bin]; }
  double frame_rate() const { return kFrameRate; }
};

/// Segments of 224 frames laid out as 224 x 224 x 3 images (HWC; rows are
/// time, columns are mel bins, the three channels are identical).
struct AudioSegments {
  std::size_t count = 0;
  std::vector<double> data;
  /// true for segments that are entirely synthetic zero padding.
  std::vector<std::uint8_t> pad_mask;

  std::span<const double> segment(std::size_t i) const {
    return std::span<const double>(data).subspan(i * kSegmentValues, kSegmentValues);
  }
  std::span<double> segment(std::size_t i) { return std::span<double>(data).subspan(i * kSegmentValues, kSegmentValues); }
};

struct MaskSpec {
  double channel_start_prob = 0.05;
  double time_start_prob = 0.15;
  std::size_t span = 10;
  std::uint64_t seed = 0;
};

struct MaskedSpectrogram {
  Spectrogram spectrogram;
  /// frames x 224, 1 where a cell was masked.
  std::vector<std::uint8_t> bitmap;
};

struct SegmentStats {
  double mean = 0.0;
  double stddev = 1.0;
};

/// Linear-interpolation resampling.
Waveform resample_waveform(const Waveform& w, int target_rate);

/// HTK-Mel centre frequency (Hz) of each of the 224 filters.
std::vector<double> mel_center_frequencies();
/// 224 x 257 triangular filter weights over the 512-point FFT bins.
const std::vector<double>& mel_filterbank();
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// 32 ms Hamming window every 8 ms, 512-point power spectrum, 224 Mel filters
/// over 0-8 kHz, natural log of (energy + 1e-10). The waveform is zero-padded
/// at the tail so the frame count is ceil(samples / 128).
Spectrogram log_mel_spectrogram(const Waveform& w);

/// Number of segments a spectrogram of `frames` frames splits into.
std::size_t natural_segment_count(std::size_t frames);

/// Cuts the spectrogram into 224-frame segments (last one zero-padded) and
/// replicates the single channel to three. With `fixed_len`, longer inputs
/// keep the middle-out selection of segments and shorter ones are extended
/// with zero segments flagged in pad_mask.
AudioSegments segment_spectrogram(const Spectrogram& s, std::optional<std::size_t> fixed_len = std::nullopt);

/// Middle-out selection of `keep` indices from `count`, in temporal order.
std::vector<std::size_t> middle_out_selection(std::size_t count, std::size_t keep);

/// Channel (mel) and time band masking with overlapping spans.
MaskedSpectrogram apply_time_channel_mask(const Spectrogram& s, const MaskSpec& spec);

/// nullopt: each non-pad segment standardized to mean 0, std 1.
/// Otherwise (x - mean) / stddev with the supplied dataset statistics.
/// Pad segments stay zero.
AudioSegments normalize_segments(const AudioSegments& a, std::optional<SegmentStats> stats = std::nullopt);

} // namespace c4v
