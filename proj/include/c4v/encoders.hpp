#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "c4v/audio_frontend.hpp"
#include "c4v/param_store.hpp"
#include "c4v/tensor.hpp"
#include "c4v/transformer.hpp"

namespace c4v {

inline constexpr std::size_t kImageSize = 224;
inline constexpr std::size_t kImageValues = kImageSize * kImageSize * kImageChannels;

struct EncoderConfig {
  std::size_t width = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t embed_dim = 64;
  std::size_t patch_size = 32;
  std::size_t vocab_size = 259;
  /// Rows of the text positional table; must cover retrieval and caption lengths.
  std::size_t max_text_len = 48;

  std::size_t grid() const { return kImageSize / patch_size; }
  std::size_t patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * kImageChannels; }
};

struct TextBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::uint32_t> ids; // batch x length

  static TextBatch from_texts(const std::vector<std::string>& texts, std::size_t length);
  /// Index of [EOS] per item; throws invalid_argument on malformed items.
  std::vector<std::size_t> eos_positions() const;
};

struct VisionBatch {
  std::size_t batch = 0;
  std::size_t frames = 0;         // L_V
  std::vector<double> pixels;     // batch x frames x 224 x 224 x 3
  std::vector<std::uint8_t> frame_valid; // batch x frames
};

enum class AudioType { vb, nb };

struct AudioBatch {
  std::size_t batch = 0;
  std::size_t segments = 0;             // L_A
  std::vector<double> data;             // batch x segments x 224 x 224 x 3
  std::vector<std::uint8_t> pad_mask;   // batch x segments
  std::vector<AudioType> item_types;    // used by AudioTypeMode::per_item

  static AudioBatch from_segments(const std::vector<AudioSegments>& items,
                                  std::vector<AudioType> types = {});
};

enum class AudioTypeMode { single_vb, single_nb, blend, append_both, per_item };

struct AudioTypeConfig {
  AudioTypeMode mode = AudioTypeMode::append_both;
  /// Weight of [NB] in blend mode.
  double alpha = 0.0;

  static AudioTypeConfig vb() { return {AudioTypeMode::single_vb, 0.0}; }
  static AudioTypeConfig nb() { return {AudioTypeMode::single_nb, 0.0}; }
  static AudioTypeConfig blend(double alpha) { return {AudioTypeMode::blend, alpha}; }
  static AudioTypeConfig both() { return {AudioTypeMode::append_both, 0.0}; }
  static AudioTypeConfig per_item() { return {AudioTypeMode::per_item, 0.0}; }
};

/// Parses vb | nb | both | record | blend:<alpha>.
AudioTypeConfig parse_audio_type(const std::string& text);
std::string audio_type_string(const AudioTypeConfig& cfg);

struct EmbeddingSet {
  std::size_t batch = 0;
  std::size_t length = 0;
  Tensor local;                     // batch*length x width
  std::vector<std::uint8_t> valid;  // batch*length
  Tensor global;                    // batch x embed_dim, unit rows
};

/// Items `indices` of an embedding set, in that order; an empty set stays empty.
EmbeddingSet select_items(const EmbeddingSet& set, std::span<const std::size_t> indices);

/// Mean of the projected valid vectors of each group, L2-normalized.
/// local is groups*L x width; throws if a group has no valid vector or the
/// mean is zero.
Tensor global_from_local(const Tensor& local, std::span<const std::uint8_t> valid, std::size_t groups,
                         const Tensor& projection);

/// Causal transformer over byte tokens; [EOS] output is the global read-out.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ParamStore& store, const EncoderConfig& cfg, Rng& rng);
  static TextEncoder bind(const ParamStore& store, const EncoderConfig& cfg);

  EmbeddingSet encode(const TextBatch& batch) const;
  /// Projected and normalized global from final-layer [EOS] features.
  Tensor project(const Tensor& eos_features) const;
  /// Final-layer features at [EOS], batch x width (before projection).
  Tensor eos_features(const EmbeddingSet& e, const TextBatch& batch) const;

  const Tensor& token_embedding() const { return token_embedding_; }
  const Tensor& positional() const { return positional_; }

 private:
  EncoderConfig cfg_;
  Tensor token_embedding_, positional_, ln_gain_, ln_bias_, projection_;
  TransformerStack stack_;
};

/// ViT-style encoder over 224x224x3 images: 32x32 patches, [CLS] first,
/// bidirectional attention, [CLS] output as the per-image vector. The audio
/// variant appends one or two audio type tokens after the patches.
class PatchEncoder {
 public:
  PatchEncoder() = default;
  PatchEncoder(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng,
               bool with_type_tokens);
  static PatchEncoder bind(const ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                           bool with_type_tokens);

  /// Per-image vectors (count x width) for `count` images stored back to back.
  /// `types` holds the type rows to append and `type_refs` which rows each
  /// image gets (empty for vision).
  Tensor encode_images(std::span<const double> images, std::size_t count, const Tensor& types = {},
                       const std::vector<std::vector<std::uint32_t>>& type_refs = {}) const;

  /// Tokens per image entering the transformer for the given number of type slots.
  std::size_t sequence_length(std::size_t type_slots) const { return 1 + cfg_.patches() + type_slots; }

  const Tensor& projection() const { return projection_; }
  const std::string& prefix() const { return prefix_; }

 private:
  std::string prefix_;
  EncoderConfig cfg_;
  bool with_types_ = false;
  Tensor patch_embed_, class_embedding_, positional_, ln_pre_gain_, ln_pre_bias_, ln_post_gain_,
      ln_post_bias_, projection_;
  Tensor type_positional_;
  TransformerStack stack_;
};

/// Rows of the flattened 32x32x3 patches, image-major then patch row-major.
std::vector<double> patchify(std::span<const double> images, std::size_t count, std::size_t patch_size);

class VisionEncoder {
 public:
  VisionEncoder() = default;
  VisionEncoder(ParamStore& store, const EncoderConfig& cfg, Rng& rng);
  static VisionEncoder bind(const ParamStore& store, const EncoderConfig& cfg);

  EmbeddingSet encode(const VisionBatch& batch) const;
  /// Frame vectors only (batch*frames x width).
  Tensor frame_features(const VisionBatch& batch) const;
  const PatchEncoder& backbone() const { return encoder_; }

 private:
  PatchEncoder encoder_;
};

class AudioEncoder {
 public:
  AudioEncoder() = default;
  AudioEncoder(ParamStore& store, const EncoderConfig& cfg, Rng& rng);
  static AudioEncoder bind(const ParamStore& store, const EncoderConfig& cfg);

  EmbeddingSet encode(const AudioBatch& batch, const AudioTypeConfig& type_cfg) const;
  Tensor segment_features(const AudioBatch& batch, const AudioTypeConfig& type_cfg) const;
  const PatchEncoder& backbone() const { return encoder_; }
  const Tensor& type_vb() const { return type_vb_; }
  const Tensor& type_nb() const { return type_nb_; }

 private:
  PatchEncoder encoder_;
  Tensor type_vb_, type_nb_;
};

/// Copies every vision.* tensor onto its audio.* counterpart and redraws the
/// audio type embeddings and the type-slot positional embedding from `rng`.
void init_audio_from_vision(ParamStore& store, Rng& rng);

} // namespace c4v
