#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace c4v {

/// Every tunable of a run. Text form is one `key = value` per line; `#`
/// starts a comment. Unknown keys are rejected.
struct RunConfig {
  // corpus
  std::size_t classes = 8;
  std::size_t items_per_class = 16;
  double clip_seconds = 3.0;
  std::size_t frames_per_item = 2;

  // model
  std::size_t width = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t embed_dim = 64;
  std::size_t patch_size = 32;
  std::size_t text_len = 48;
  std::size_t caption_len = 48;
  std::size_t audio_segments = 2;
  std::size_t fusion_layers = 4;
  std::size_t caption_layers = 2;

  // optimisation
  std::size_t seed = 0;
  std::size_t batch_size = 8;
  std::size_t steps = 1000;
  double lr = 1e-3;
  double head_lr = 5e-3;
  bool freeze_text = true;
  bool freeze_vision = true;
  bool init_audio_from_vision = true;
  /// Text-vision contrastive steps run before audio pre-training.
  std::size_t warmup_steps = 0;
  std::string logit_scale = "fixed"; // fixed | learnable
  double logit_scale_value = 1.0;
  bool symmetric_intra = true;
  double mask_channel_prob = 0.05;
  double mask_time_prob = 0.15;
  std::size_t mask_span = 10;

  // fine-tuning and evaluation
  std::string type_mode = "both";
  std::string fusion = "g2g";
  std::size_t finetune_steps = 200;
  std::size_t caption_steps = 500;
  std::size_t probe_epochs = 100;
  std::string sweep_grid = "0,0.25,0.5,0.75,1";

  /// Parses text, starting from the defaults.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  void set(const std::string& key, const std::string& value);

  /// Canonical `key = value` listing of every field, sorted by key.
  std::string echo() const;
  /// FNV-1a 64 of the model-shape fields only (what a checkpoint must match).
  std::uint64_t shape_digest() const;

  /// Throws invalid_argument on inconsistent settings.
  void validate() const;
};

std::uint64_t fnv1a64(const std::string& bytes);

} // namespace c4v
