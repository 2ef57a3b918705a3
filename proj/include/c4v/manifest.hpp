#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "c4v/encoders.hpp"

namespace c4v {

enum class Split { train, val, test };

std::string split_name(Split s);
Split parse_split(const std::string& s);
std::string audio_type_name(AudioType t); // "VB" / "NB"
AudioType parse_audio_type_name(const std::string& s);

struct ManifestRecord {
  std::string id;
  std::string text;
  std::vector<std::string> frame_paths; // relative to the manifest directory
  std::string wav_path;                 // empty for a silent video
  std::size_t class_id = 0;
  AudioType audio_type = AudioType::nb;
  Split split = Split::train;
};

struct CorpusManifest {
  std::string root; // directory holding the manifest
  std::vector<ManifestRecord> records;

  std::vector<std::size_t> indices(Split split) const;
  std::string resolve(const std::string& relative) const;
};

/// JSON lines, one record per line.
void save_manifest(const CorpusManifest& m, const std::string& path);

/// Loads and validates: unique ids, one split per id, at most 12 frames,
/// every referenced file present. Errors name the offending record.
CorpusManifest load_manifest(const std::string& path);

/// Validation alone (used by load_manifest).
void validate_manifest(const CorpusManifest& m, bool check_files);

} // namespace c4v
