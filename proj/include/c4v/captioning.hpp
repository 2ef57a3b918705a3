#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "c4v/encoders.hpp"
#include "c4v/param_store.hpp"
#include "c4v/tensor.hpp"
#include "c4v/transformer.hpp"

namespace c4v {

enum class Modality : std::uint8_t { word, vision, audio };

/// Token layout of one caption-generator input: words, then frames, then
/// segments.
///
/// Word t sees words 0..t and every valid frame and segment. Frame and
/// segment tokens see only valid frame and segment tokens, never words: any
/// word they saw would reach earlier word positions through them.
struct MultimodalSequence {
  std::size_t words = 0;
  std::size_t frames = 0;
  std::size_t segments = 0;
  std::vector<Modality> tags;
  std::vector<std::uint8_t> valid;
  std::vector<std::uint8_t> allow; // length x length
  Tensor features;                 // length x D, raw (no positional/type terms)

  std::size_t length() const { return words + frames + segments; }
};

/// frames/segments may be undefined tensors for absent modalities; the flag
/// spans then must be empty.
MultimodalSequence build_caption_input(const Tensor& words, const Tensor& frames,
                                       std::span<const std::uint8_t> frame_valid, const Tensor& segments,
                                       std::span<const std::uint8_t> segment_valid);

struct CaptionConfig {
  std::size_t width = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t vocab_size = 259;
  std::size_t max_positions = 64;
  std::size_t max_len = 48;
};

/// Transformer over [words | frames | segments] with a vocabulary read-out at
/// word positions. Word features are rows of the text encoder's token
/// embedding table.
class CaptionModel {
 public:
  CaptionModel() = default;
  CaptionModel(ParamStore& store, const CaptionConfig& cfg, Rng& rng);
  static CaptionModel bind(const ParamStore& store, const CaptionConfig& cfg);

  /// Logits (batch*T x V) at every word position. ids is batch x T. vision
  /// and audio carry the same batch, or are empty.
  Tensor logits(std::span<const std::uint32_t> ids, std::size_t batch, std::size_t length,
                const EmbeddingSet& vision, const EmbeddingSet& audio) const;

  /// Next-token probabilities for a single sequence (T x V, rows sum to 1).
  Tensor step_probabilities(const MultimodalSequence& seq) const;

  /// Mean next-token cross-entropy; inputs drop the last token, targets drop
  /// [SOS]; [PAD] targets are ignored.
  Tensor teacher_forced_loss(const TextBatch& captions, const EmbeddingSet& vision,
                             const EmbeddingSet& audio) const;

  /// Greedy decoding of item `item` of the given feature sets. Returns the
  /// generated ids without [SOS] and [EOS]; at most max_len tokens.
  std::vector<std::uint32_t> greedy_decode(const EmbeddingSet& vision, const EmbeddingSet& audio,
                                           std::size_t item, std::size_t max_len) const;

  const Tensor& word_embedding() const { return token_embedding_; }
  const CaptionConfig& config() const { return cfg_; }

 private:
  Tensor forward_layout(const Tensor& raw, std::size_t groups, std::size_t words, std::size_t frames,
                        std::size_t segments, const std::vector<std::uint8_t>& allow) const;

  CaptionConfig cfg_;
  Tensor token_embedding_, type_rows_, positional_, ln_gain_, ln_bias_, out_w_, out_b_;
  TransformerStack stack_;
};

} // namespace c4v
