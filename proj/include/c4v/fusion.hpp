#pragma once

#include <cstddef>
#include <string>

#include "c4v/encoders.hpp"
#include "c4v/param_store.hpp"
#include "c4v/tensor.hpp"
#include "c4v/transformer.hpp"

namespace c4v {

enum class FusionMethod { g2g, g2l, l2l };

/// Which video modalities enter the score.
enum class VideoSources { both, vision_only, audio_only };

FusionMethod parse_fusion(const std::string& text);
std::string fusion_name(FusionMethod method);

struct FusionConfig {
  std::size_t width = 64;
  std::size_t embed_dim = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  /// Positional table rows; each modality section indexes it from 0.
  std::size_t max_positions = 64;
  VideoSources sources = VideoSources::both;
};

/// Text-to-video similarity. G2G has no parameters; G2L runs a temporal
/// transformer over frame and segment tokens and projects the pooled output
/// into the joint space; L2L runs a joint transformer over word, frame and
/// segment tokens for every (query, video) pair and reads out a scalar.
///
/// Every method scores each (query, video) pair from that pair's inputs
/// alone: scores(Q, G) equals the Q x G pairwise evaluations.
class FusionHead {
 public:
  FusionHead() = default;
  FusionHead(ParamStore& store, FusionMethod method, const FusionConfig& cfg, Rng& rng);
  static FusionHead bind(const ParamStore& store, FusionMethod method, const FusionConfig& cfg);

  /// Q x G scores. `text` carries Q queries; `vision` and `audio` carry G
  /// videos. An unused modality may be an empty EmbeddingSet.
  Tensor scores(const EmbeddingSet& text, const EmbeddingSet& vision, const EmbeddingSet& audio) const;

  /// G x E unit video vectors (G2G and G2L only).
  Tensor video_vectors(const EmbeddingSet& vision, const EmbeddingSet& audio) const;

  FusionMethod method() const { return method_; }
  const FusionConfig& config() const { return cfg_; }
  /// Prefix of this head's parameters in the store ("" for G2G).
  static std::string prefix(FusionMethod method);

 private:
  Tensor l2l_scores(const EmbeddingSet& text, const EmbeddingSet& vision, const EmbeddingSet& audio) const;

  FusionMethod method_ = FusionMethod::g2g;
  FusionConfig cfg_;
  Tensor type_text_, type_vision_, type_audio_, positional_;
  Tensor projection_;        // G2L
  Tensor score_w_, score_b_; // L2L
  TransformerStack stack_;
};

/// x . normalize((y + z) / 2) for single unit vectors; throws when y + z = 0.
double similarity_g2g(const Tensor& x, const Tensor& y, const Tensor& z);

} // namespace c4v
