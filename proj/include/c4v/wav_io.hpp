#pragma once

#include <string>

#include "c4v/audio_frontend.hpp"

namespace c4v {

/// Reads 16-bit PCM WAV. Stereo input is averaged to mono; samples are
/// scaled to [-1, 1).
Waveform read_wav(const std::string& path);

/// Writes a mono 16-bit PCM WAV. Samples are clipped to [-1, 1].
void write_wav(const std::string& path, const Waveform& w);

} // namespace c4v
