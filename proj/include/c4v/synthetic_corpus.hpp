#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "c4v/image_io.hpp"
#include "c4v/manifest.hpp"

namespace c4v {

struct CorpusSpec {
  std::size_t classes = 8;
  std::size_t items_per_class = 16;
  std::size_t frames_per_item = 2;
  double clip_seconds = 3.0;
  std::uint64_t seed = 0;
  /// Level of the class code the record's type carries.
  double code_amplitude = 0.45;
  /// Level of the other code, drawn from a random class.
  double distractor_amplitude = 0.15;
  /// Additive white noise; the 16-bit WAV quantization adds its own.
  double noise_amplitude = 0.0;
};

/// "alpha", "bravo", ... ; classes past the alphabet get a numeric suffix.
std::string class_name(std::size_t c);
std::string class_caption(std::size_t c);

/// NB code: pure tone of 200 + 60c Hz.
double class_tone_hz(std::size_t c);
/// VB code: amplitude modulation at 2 + c Hz on a 1 kHz carrier.
double class_rhythm_hz(std::size_t c);
inline constexpr double kRhythmCarrierHz = 1000.0;

/// Procedural frame of class c; `phase` varies it per item and frame.
Image class_frame(std::size_t c, std::size_t classes, double phase, std::uint64_t noise_seed);

/// Writes frames/, audio/ and manifest.jsonl under out_dir and returns the
/// manifest. Half of each class is VB and half NB (alternating); each
/// (class, type) group is split 70/10/20 with at least one test item.
CorpusManifest generate_synthetic_corpus(const CorpusSpec& spec, const std::string& out_dir);

} // namespace c4v
