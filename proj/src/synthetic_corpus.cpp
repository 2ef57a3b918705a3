#include "c4v/synthetic_corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <stdexcept>

#include "c4v/errors.hpp"
#include "c4v/wav_io.hpp"

namespace c4v {

namespace fs = std::filesystem;

namespace {

constexpr std::array<const char*, 26> kNames = {
    "alpha", "bravo", "charlie", "delta", "echo",   "foxtrot", "golf",    "hotel",  "india",
    "juliet", "kilo", "lima",    "mike",  "november", "oscar", "papa",    "quebec", "romeo",
    "sierra", "tango", "uniform", "victor", "whiskey", "xray",  "yankee", "zulu"};

std::string padded(std::size_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, v);
  return buf;
}

} // namespace

std::string class_name(std::size_t c) {
  if (c < kNames.size()) return kNames[c];
  return std::string(kNames[c % kNames.size()]) + std::to_string(c / kNames.size());
}

std::string class_caption(std::size_t c) { return "this is a recording of class " + class_name(c); }

double class_tone_hz(std::size_t c) { return 200.0 + 60.0 * static_cast<double>(c); }

double class_rhythm_hz(std::size_t c) { return 2.0 + static_cast<double>(c); }

Image class_frame(std::size_t c, std::size_t classes, double phase, std::uint64_t noise_seed) {
  constexpr double pi = std::numbers::pi;
  Image img;
  img.width = 224;
  img.height = 224;
  img.pixels.resize(224 * 224 * 3);
  const double angle = pi * static_cast<double>(c) / static_cast<double>(classes);
  const double freq = 2.0 + static_cast<double>(c % 4);
  const double hue = 2.0 * pi * static_cast<double>(c) / static_cast<double>(classes);
  const std::array<double, 3> tint = {std::cos(hue), std::cos(hue - 2.0 * pi / 3.0), std::cos(hue + 2.0 * pi / 3.0)};
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, 12.0);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < 224; ++y) {
    for (std::size_t x = 0; x < 224; ++x) {
      const double u = (static_cast<double>(x) * ca + static_cast<double>(y) * sa) / 224.0;
      const double wave = std::sin(2.0 * pi * freq * u + phase);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = 127.5 + 60.0 * tint[ch] + 55.0 * wave + noise(rng);
        img.pixels[(y * 224 + x) * 3 + ch] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return img;
}

CorpusManifest generate_synthetic_corpus(const CorpusSpec& spec, const std::string& out_dir) {
  if (spec.classes < 2) {
    throw std::invalid_argument("synthetic corpus: at least two classes required");
  }
  if (spec.items_per_class < 2 || spec.frames_per_item < 1 || spec.frames_per_item > 12) {
    throw std::invalid_argument("synthetic corpus: need >= 2 items per class and 1..12 frames per item");
  }
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "frames", ec);
  fs::create_directories(fs::path(out_dir) / "audio", ec);
  if (ec || !fs::is_directory(fs::path(out_dir) / "audio")) {
    throw IoError("cannot create corpus directories under " + out_dir);
  }

  constexpr double pi = std::numbers::pi;
  const auto samples = static_cast<std::size_t>(std::llround(spec.clip_seconds * kAudioSampleRate));
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_class(0, spec.classes - 1);

  CorpusManifest m;
  m.root = out_dir;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    // Per-type position within the class, to assign splits per group.
    std::array<std::vector<std::size_t>, 2> groups;
    for (std::size_t i = 0; i < spec.items_per_class; ++i) {
      const auto type = i % 2 == 0 ? AudioType::vb : AudioType::nb;
      ManifestRecord r;
      r.id = class_name(c) + "_" + padded(i, 3);
      r.text = class_caption(c);
      r.class_id = c;
      r.audio_type = type;

      const double frame_phase = 2.0 * pi * unit(rng);
      for (std::size_t k = 0; k < spec.frames_per_item; ++k) {
        const auto rel = "frames/" + r.id + "_" + std::to_string(k) + ".ppm";
        write_ppm(m.resolve(rel), class_frame(c, spec.classes, frame_phase + 0.4 * static_cast<double>(k), rng()));
        r.frame_paths.push_back(rel);
      }

      const auto other = pick_class(rng);
      const double tone_hz = class_tone_hz(type == AudioType::nb ? c : other);
      const double rhythm_hz = class_rhythm_hz(type == AudioType::vb ? c : other);
      const double tone_amp = type == AudioType::nb ? spec.code_amplitude : spec.distractor_amplitude;
      const double rhythm_amp = type == AudioType::vb ? spec.code_amplitude : spec.distractor_amplitude;
      const double tone_phase = 2.0 * pi * unit(rng);
      const double rhythm_phase = 2.0 * pi * unit(rng);
      std::normal_distribution<double> noise(0.0, spec.noise_amplitude);
      Waveform w;
      w.samples.resize(samples);
      for (std::size_t n = 0; n < samples; ++n) {
        const double t = static_cast<double>(n) / kAudioSampleRate;
        const double tone = std::sin(2.0 * pi * tone_hz * t + tone_phase);
        const double envelope = 0.5 + 0.5 * std::sin(2.0 * pi * rhythm_hz * t + rhythm_phase);
        const double rhythm = envelope * std::sin(2.0 * pi * kRhythmCarrierHz * t);
        w.samples[n] = tone_amp * tone + rhythm_amp * rhythm + noise(rng);
      }
      r.wav_path = "audio/" + r.id + ".wav";
      write_wav(m.resolve(r.wav_path), w);

      groups[type == AudioType::vb ? 0 : 1].push_back(m.records.size());
      m.records.push_back(std::move(r));
    }
    for (const auto& g : groups) {
      const auto n = g.size();
      auto train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
      auto val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
      if (train + val >= n) {
        if (val > 0) --val;
        else --train;
      }
      for (std::size_t i = 0; i < n; ++i) {
        m.records[g[i]].split = i < train ? Split::train : (i < train + val ? Split::val : Split::test);
      }
    }
  }
  save_manifest(m, (fs::path(out_dir) / "manifest.jsonl").string());
  return m;
}

} // namespace c4v
