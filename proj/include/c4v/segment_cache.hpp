#pragma once

#include <string>

#include "c4v/audio_frontend.hpp"

namespace c4v {

/// One preprocessed audio item of un-normalized log-Mel segments. On disk:
/// "A4V1", f64 duration, u32 L_A, L_A pad flags (u8), then L_A x 224 x 224
/// little-endian f64 values of a single channel; the other two channels are
/// replicated on load.
struct CachedAudio {
  double duration = 0.0;
  AudioSegments segments;
};

void write_segment_cache(const std::string& path, const CachedAudio& item);
CachedAudio read_segment_cache(const std::string& path);

/// Contiguous spectrogram covered by the non-pad segments, with the tail
/// padding of the last natural segment removed.
Spectrogram spectrogram_from_cache(const CachedAudio& item);

} // namespace c4v
