#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "c4v/param_store.hpp"
#include "c4v/tensor.hpp"

namespace c4v {

/// Multiplier applied to cosine similarities. Fixed at 1 by default; the
/// learnable variant stores a log-scale initialised to ln(1/0.07) and clamps
/// it at ln(100).
class LogitScale {
 public:
  static constexpr double kMaxLogScale = 4.605170185988092; // ln 100

  LogitScale() = default;
  static LogitScale fixed(double value = 1.0);
  static LogitScale learnable(ParamStore& store, const std::string& name = "logit_scale");
  static LogitScale bind(const ParamStore& store, const std::string& name = "logit_scale");

  /// One-element tensor carrying the current multiplier.
  Tensor value() const;
  bool is_learnable() const { return log_scale_.defined(); }

 private:
  double fixed_ = 1.0;
  Tensor log_scale_;
};

/// Mean of the row-wise and column-wise cross-entropy of scale * Z X^T with
/// diagonal targets. Throws if a row of either input is not unit-norm
/// (tolerance 1e-6).
Tensor inter_modal_nce(const Tensor& z, const Tensor& x, const Tensor& logit_scale);

/// Mean of the row-wise and column-wise cross-entropy of a square B x B
/// logit matrix with diagonal targets.
Tensor symmetric_score_nce(const Tensor& logits);

/// Logit mask for the clean-anchored intra-modal softmax: B x 2B flags where
/// columns [0, B) are the masked views and [B, 2B) the other clean views.
/// Each row admits exactly 2B - 1 terms.
std::vector<std::uint8_t> intra_modal_logit_mask(std::size_t batch);

/// Contrastive loss between clean globals Z and masked globals Zh. Anchor z_i
/// has positive zh_i and negatives zh_j (j != i) and z_k (k != i). The
/// symmetric form averages this with the same loss anchored on Zh.
Tensor intra_modal_nce(const Tensor& z, const Tensor& zh, const Tensor& logit_scale, bool symmetric = true);

struct LossBundle {
  Tensor nce_at;
  Tensor nce_av;
  Tensor nce_a_hat;
  Tensor total;
};

struct PretrainLossOptions {
  bool symmetric_intra = true;
};

/// Sum of the text-audio, vision-audio and clean-masked audio losses.
LossBundle total_pretrain_loss(const Tensor& text, const Tensor& vision, const Tensor& audio,
                               const Tensor& masked_audio, const Tensor& logit_scale,
                               const PretrainLossOptions& options = {});

} // namespace c4v
