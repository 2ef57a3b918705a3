#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

#include "c4v/captioning.hpp"
#include "c4v/config.hpp"
#include "c4v/encoders.hpp"
#include "c4v/fusion.hpp"
#include "c4v/objectives.hpp"
#include "c4v/param_store.hpp"

namespace c4v {

EncoderConfig encoder_config(const RunConfig& cfg);
FusionConfig fusion_config(const RunConfig& cfg);
CaptionConfig caption_config(const RunConfig& cfg);

/// Three encoders, the logit scale, and task heads created on demand. The
/// backbones are drawn from a generator seeded with the config seed; each
/// head draws from its own stream so creation order does not matter.
///
/// Modules hold handles into the parameter store, so a Model is movable but
/// not copyable.
class Model {
 public:
  explicit Model(const RunConfig& cfg);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const RunConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const EncoderConfig& encoder_cfg() const { return enc_cfg_; }

  const TextEncoder& text() const { return text_; }
  const VisionEncoder& vision() const { return vision_; }
  const AudioEncoder& audio() const { return audio_; }
  Tensor logit_scale() const { return logit_scale_.value(); }

  const FusionHead& fusion(FusionMethod method);
  const CaptionModel& caption();
  bool has_fusion(FusionMethod method) const { return fusion_.count(method) != 0; }
  bool has_caption() const { return caption_.has_value(); }

  /// Creates whichever heads own parameters with these names.
  void ensure_heads_for(const std::vector<std::string>& names);

  /// Copies the vision backbone onto the audio encoder and redraws the audio
  /// type embeddings from the head stream.
  void reinit_audio_from_vision();

  /// Training randomness (batch sampling, masking); checkpointed.
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

 private:
  Rng head_rng(const std::string& prefix) const;

  RunConfig cfg_;
  EncoderConfig enc_cfg_;
  ParamStore store_;
  TextEncoder text_;
  VisionEncoder vision_;
  AudioEncoder audio_;
  LogitScale logit_scale_;
  std::map<FusionMethod, FusionHead> fusion_;
  std::optional<CaptionModel> caption_;
  Rng rng_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "C4V1", u32 version, u64 config shape digest, config echo, u64 optimizer
/// step, RNG state, then per tensor: name, group, trainable, rank, extents,
/// values, and the two Adam moments (empty when never stepped).
void save_checkpoint(const Model& model, const std::string& path);

/// Builds a model from `cfg` and fills it from the file. Parsing completes
/// before anything is built (FormatError on bad magic, version or
/// truncation); shapes are checked before the digest, and a mismatch throws
/// invalid_argument naming the tensor. Parameters absent from the file keep
/// their initial values.
Model load_checkpoint(const std::string& path, const RunConfig& cfg);

/// Config echo stored in a checkpoint, for recovering the run settings.
RunConfig checkpoint_config(const std::string& path);

} // namespace c4v
