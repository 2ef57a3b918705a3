#include "c4v/objectives.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "c4v/ops.hpp"

namespace c4v {

namespace {

void require_unit_rows(const Tensor& t, const char* what) {
  const auto cols = t.cols();
  const auto v = t.values();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      sq += v[r * cols + c] * v[r * cols + c];
    }
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
      throw std::invalid_argument(std::string(what) + ": row " + std::to_string(r) + " is not unit-norm");
    }
  }
}

std::vector<std::size_t> diagonal_targets(std::size_t n) {
  std::vector<std::size_t> t(n);
  std::iota(t.begin(), t.end(), std::size_t{0});
  return t;
}

} // namespace

LogitScale LogitScale::fixed(double value) {
  if (!(value > 0.0)) {
    throw std::invalid_argument("logit scale must be positive");
  }
  LogitScale s;
  s.fixed_ = value;
  return s;
}

LogitScale LogitScale::learnable(ParamStore& store, const std::string& name) {
  LogitScale s;
  s.log_scale_ = store.add(name, Tensor::scalar(std::log(1.0 / 0.07), true), ParamGroup::head);
  return s;
}

LogitScale LogitScale::bind(const ParamStore& store, const std::string& name) {
  LogitScale s;
  s.log_scale_ = store.get(name);
  return s;
}

Tensor LogitScale::value() const {
  if (!log_scale_.defined()) {
    return Tensor::scalar(fixed_);
  }
  return exp(clamp_max(log_scale_, kMaxLogScale));
}

Tensor inter_modal_nce(const Tensor& z, const Tensor& x, const Tensor& logit_scale) {
  if (z.rank() != 2 || z.shape() != x.shape() || z.rows() == 0) {
    throw std::invalid_argument("inter_modal_nce: inputs must be matching non-empty B x D matrices");
  }
  require_unit_rows(z, "inter_modal_nce");
  require_unit_rows(x, "inter_modal_nce");
  return symmetric_score_nce(scale_by(matmul_nt(z, x), logit_scale));
}

Tensor symmetric_score_nce(const Tensor& logits) {
  if (logits.rank() != 2 || logits.rows() != logits.cols() || logits.rows() == 0) {
    throw std::invalid_argument("symmetric_score_nce: logits must be a non-empty square matrix");
  }
  const auto targets = diagonal_targets(logits.rows());
  return scale(add(cross_entropy_rows(logits, targets), cross_entropy_rows(transpose(logits), targets)), 0.5);
}

std::vector<std::uint8_t> intra_modal_logit_mask(std::size_t batch) {
  std::vector<std::uint8_t> allowed(batch * 2 * batch, 1);
  for (std::size_t i = 0; i < batch; ++i) {
    allowed[i * 2 * batch + batch + i] = 0;
  }
  return allowed;
}

Tensor intra_modal_nce(const Tensor& z, const Tensor& zh, const Tensor& logit_scale, bool symmetric) {
  if (z.rank() != 2 || z.shape() != zh.shape()) {
    throw std::invalid_argument("intra_modal_nce: inputs must be matching B x D matrices");
  }
  const auto b = z.rows();
  if (b < 2) {
    throw std::invalid_argument("intra_modal_nce: needs a batch of at least 2");
  }
  require_unit_rows(z, "intra_modal_nce");
  require_unit_rows(zh, "intra_modal_nce");
  const auto allowed = intra_modal_logit_mask(b);
  const auto targets = diagonal_targets(b);
  auto anchored = [&](const Tensor& anchor, const Tensor& other) {
    const auto logits = scale_by(concat_cols(matmul_nt(anchor, other), matmul_nt(anchor, anchor)), logit_scale);
    return cross_entropy_rows(logits, targets, allowed);
  };
  const auto clean = anchored(z, zh);
  if (!symmetric) {
    return clean;
  }
  return scale(add(clean, anchored(zh, z)), 0.5);
}

LossBundle total_pretrain_loss(const Tensor& text, const Tensor& vision, const Tensor& audio,
                               const Tensor& masked_audio, const Tensor& logit_scale,
                               const PretrainLossOptions& options) {
  if (text.shape() != audio.shape() || vision.shape() != audio.shape() || masked_audio.shape() != audio.shape()) {
    throw std::invalid_argument("total_pretrain_loss: text, vision, audio and masked audio must share B x D");
  }
  LossBundle out;
  out.nce_at = inter_modal_nce(audio, text, logit_scale);
  out.nce_av = inter_modal_nce(audio, vision, logit_scale);
  out.nce_a_hat = intra_modal_nce(audio, masked_audio, logit_scale, options.symmetric_intra);
  out.total = add(add(out.nce_at, out.nce_av), out.nce_a_hat);
  return out;
}

} // namespace c4v
