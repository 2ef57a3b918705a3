#include "c4v/audio_frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace c4v {

namespace {

constexpr double kMelHighHz = kAudioSampleRate / 2.0;

std::vector<double> hamming_window() {
  std::vector<double> w(kWindowLength);
  for (std::size_t n = 0; n < kWindowLength; ++n) {
    w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / (kWindowLength - 1));
  }
  return w;
}

// FFTW planning is not thread-safe; execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanDeleter {
  void operator()(fftw_plan_s* p) const {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(p);
  }
};

fftw_plan make_r2c_plan(double* in, fftw_complex* out) {
  std::lock_guard lock(planner_mutex());
  return fftw_plan_dft_r2c_1d(static_cast<int>(kWindowLength), in, out, FFTW_ESTIMATE);
}

} // namespace

double silence_log_energy() {
  return std::log(kLogEnergyFloor);
}

double hz_to_mel(double hz) {
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

std::vector<double> mel_center_frequencies() {
  const double delta = hz_to_mel(kMelHighHz) / (kMelBins + 1);
  std::vector<double> centers(kMelBins);
  for (std::size_t m = 0; m < kMelBins; ++m) {
    centers[m] = mel_to_hz(delta * static_cast<double>(m + 1));
  }
  return centers;
}

const std::vector<double>& mel_filterbank() {
  static const std::vector<double> weights = [] {
    std::vector<double> w(kMelBins * kFftBins, 0.0);
    const double delta = hz_to_mel(kMelHighHz) / (kMelBins + 1);
    for (std::size_t m = 0; m < kMelBins; ++m) {
      const double left = delta * static_cast<double>(m);
      const double center = left + delta;
      const double right = center + delta;
      for (std::size_t k = 0; k < kFftBins; ++k) {
        const double mel = hz_to_mel(static_cast<double>(k) * kAudioSampleRate / kWindowLength);
        if (mel > left && mel <= center) {
          w[m * kFftBins + k] = (mel - left) / delta;
        } else if (mel > center && mel < right) {
          w[m * kFftBins + k] = (right - mel) / delta;
        }
      }
    }
    return w;
  }();
  return weights;
}

Waveform resample_waveform(const Waveform& w, int target_rate) {
  if (target_rate <= 0) {
    throw std::invalid_argument("resample_waveform: target rate must be positive");
  }
  if (w.samples.empty() || w.sample_rate <= 0) {
    throw std::invalid_argument("resample_waveform: empty waveform");
  }
  if (w.sample_rate == target_rate) {
    return w;
  }
  const auto n = w.samples.size();
  const double ratio = static_cast<double>(w.sample_rate) / target_rate;
  const auto out_len = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * target_rate / w.sample_rate)));
  Waveform out{std::vector<double>(out_len), target_rate};
  for (std::size_t k = 0; k < out_len; ++k) {
    const double pos = static_cast<double>(k) * ratio;
    const auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= n) {
      out.samples[k] = w.samples[n - 1];
      continue;
    }
    const double frac = pos - static_cast<double>(i);
    out.samples[k] = w.samples[i] * (1.0 - frac) + w.samples[i + 1] * frac;
  }
  return out;
}

Spectrogram log_mel_spectrogram(const Waveform& w) {
  if (w.sample_rate != kAudioSampleRate) {
    throw std::invalid_argument("log_mel_spectrogram: expected " + std::to_string(kAudioSampleRate) +
                                " Hz input, got " + std::to_string(w.sample_rate));
  }
  if (w.samples.empty()) {
    throw std::invalid_argument("log_mel_spectrogram: empty waveform");
  }
  static const std::vector<double> window = hamming_window();
  const auto& filters = mel_filterbank();
  const auto n = w.samples.size();
  const auto frames = (n + kHopLength - 1) / kHopLength;

  auto* in = static_cast<double*>(fftw_malloc(sizeof(double) * kWindowLength));
  auto* out = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * kFftBins));
  std::unique_ptr<fftw_plan_s, PlanDeleter> plan(make_r2c_plan(in, out));

  Spectrogram s;
  s.frames = frames;
  s.source_duration = w.duration();
  s.values.assign(frames * kMelBins, 0.0);
  std::vector<double> power(kFftBins);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto start = t * kHopLength;
    for (std::size_t i = 0; i < kWindowLength; ++i) {
      in[i] = start + i < n ? w.samples[start + i] * window[i] : 0.0;
    }
    fftw_execute(plan.get());
    for (std::size_t k = 0; k < kFftBins; ++k) {
      power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    }
    for (std::size_t m = 0; m < kMelBins; ++m) {
      double energy = 0.0;
      const double* row = filters.data() + m * kFftBins;
      for (std::size_t k = 0; k < kFftBins; ++k) {
        energy += row[k] * power[k];
      }
      s.values[t * kMelBins + m] = std::log(energy + kLogEnergyFloor);
    }
  }
  plan.reset();
  fftw_free(in);
  fftw_free(out);
  return s;
}

std::size_t natural_segment_count(std::size_t frames) {
  return (frames + kSegmentFrames - 1) / kSegmentFrames;
}

std::vector<std::size_t> middle_out_selection(std::size_t count, std::size_t keep) {
  keep = std::min(keep, count);
  std::vector<std::size_t> order;
  if (keep == 0) {
    return order;
  }
  const auto center = count / 2;
  order.push_back(center);
  for (std::size_t d = 1; order.size() < keep; ++d) {
    if (d <= center) {
      order.push_back(center - d);
    }
    if (order.size() < keep && center + d < count) {
      order.push_back(center + d);
    }
  }
  std::sort(order.begin(), order.end());
  return order;
}

AudioSegments segment_spectrogram(const Spectrogram& s, std::optional<std::size_t> fixed_len) {
  if (fixed_len && *fixed_len == 0) {
    throw std::invalid_argument("segment_spectrogram: fixed length must be positive");
  }
  if (s.frames == 0 || s.values.size() != s.frames * kMelBins) {
    throw std::invalid_argument("segment_spectrogram: malformed spectrogram");
  }
  const auto natural = natural_segment_count(s.frames);
  std::vector<std::size_t> chosen(natural);
  for (std::size_t i = 0; i < natural; ++i) {
    chosen[i] = i;
  }
  std::size_t total = natural;
  if (fixed_len) {
    if (natural > *fixed_len) {
      chosen = middle_out_selection(natural, *fixed_len);
    }
    total = *fixed_len;
  }

  AudioSegments out;
  out.count = total;
  out.data.assign(total * kSegmentValues, 0.0);
  out.pad_mask.assign(total, 1);
  for (std::size_t slot = 0; slot < chosen.size(); ++slot) {
    out.pad_mask[slot] = 0;
    auto dst = out.segment(slot);
    const auto first_frame = chosen[slot] * kSegmentFrames;
    const auto last_frame = std::min(first_frame + kSegmentFrames, s.frames);
    for (std::size_t t = first_frame; t < last_frame; ++t) {
      const auto r = t - first_frame;
      for (std::size_t m = 0; m < kMelBins; ++m) {
        const double v = s.values[t * kMelBins + m];
        double* px = dst.data() + (r * kMelBins + m) * kImageChannels;
        px[0] = v;
        px[1] = v;
        px[2] = v;
      }
    }
  }
  return out;
}

MaskedSpectrogram apply_time_channel_mask(const Spectrogram& s, const MaskSpec& spec) {
  if (spec.channel_start_prob < 0.0 || spec.channel_start_prob > 1.0 || spec.time_start_prob < 0.0 ||
      spec.time_start_prob > 1.0 || spec.span == 0) {
    throw std::invalid_argument("apply_time_channel_mask: invalid mask spec");
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::uint8_t> masked_bins(kMelBins, 0);
  std::vector<std::uint8_t> masked_frames(s.frames, 0);
  for (std::size_t i = 0; i < kMelBins; ++i) {
    if (unit(rng) < spec.channel_start_prob) {
      std::fill(masked_bins.begin() + static_cast<std::ptrdiff_t>(i),
                masked_bins.begin() + static_cast<std::ptrdiff_t>(std::min(i + spec.span, kMelBins)), 1);
    }
  }
  for (std::size_t t = 0; t < s.frames; ++t) {
    if (unit(rng) < spec.time_start_prob) {
      std::fill(masked_frames.begin() + static_cast<std::ptrdiff_t>(t),
                masked_frames.begin() + static_cast<std::ptrdiff_t>(std::min(t + spec.span, s.frames)), 1);
    }
  }

  MaskedSpectrogram out{s, std::vector<std::uint8_t>(s.frames * kMelBins, 0)};
  const double floor = silence_log_energy();
  for (std::size_t t = 0; t < s.frames; ++t) {
    for (std::size_t m = 0; m < kMelBins; ++m) {
      if (masked_frames[t] || masked_bins[m]) {
        out.bitmap[t * kMelBins + m] = 1;
        out.spectrogram.values[t * kMelBins + m] = floor;
      }
    }
  }
  return out;
}

AudioSegments normalize_segments(const AudioSegments& a, std::optional<SegmentStats> stats) {
  if (stats && !(stats->stddev > 0.0)) {
    throw std::invalid_argument("normalize_segments: standard deviation must be positive");
  }
  AudioSegments out = a;
  for (std::size_t i = 0; i < a.count; ++i) {
    if (a.pad_mask[i]) {
      continue;
    }
    auto seg = out.segment(i);
    double mean = 0.0, stddev = 1.0;
    if (stats) {
      mean = stats->mean;
      stddev = stats->stddev;
    } else {
      for (double v : seg) {
        mean += v;
      }
      mean /= static_cast<double>(seg.size());
      double var = 0.0;
      for (double v : seg) {
        var += (v - mean) * (v - mean);
      }
      var /= static_cast<double>(seg.size());
      if (!(var > 0.0)) {
        throw std::invalid_argument("normalize_segments: segment " + std::to_string(i) + " has zero variance");
      }
      stddev = std::sqrt(var);
    }
    for (auto& v : seg) {
      v = (v - mean) / stddev;
    }
  }
  return out;
}

} // namespace c4v
