#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "c4v/param_store.hpp"
#include "c4v/tensor.hpp"

namespace c4v {

/// Which keys each query may attend to, for sequences of a fixed length L.
/// Either one L x L pattern shared by every group, or one pattern per group.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t length, std::size_t groups, std::vector<std::uint8_t> allow);

  static AttentionMask causal(std::size_t length);
  /// Bidirectional attention restricted to valid keys; key_valid has
  /// groups * length entries.
  static AttentionMask key_padding(std::size_t length, std::span<const std::uint8_t> key_valid);

  std::size_t length() const { return length_; }
  /// 0 when the pattern is shared.
  std::size_t groups() const { return groups_; }
  bool allowed(std::size_t group, std::size_t query, std::size_t key) const {
    const auto base = groups_ == 0 ? 0 : group * length_ * length_;
    return allow_[base + query * length_ + key] != 0;
  }

 private:
  std::size_t length_ = 0;
  std::size_t groups_ = 0;
  std::vector<std::uint8_t> allow_;
};

/// Scaled dot-product attention over `groups` independent sequences stacked
/// row-wise in q, k, v (each groups*L x D), with D split into `heads` heads.
/// Masked keys get exactly zero weight.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t groups,
                            std::size_t heads, const AttentionMask* mask = nullptr);

/// Pre-norm residual block: x + Attn(LN(x)), then h + MLP(LN(h)) with GELU.
/// There is no key bias; softmax is invariant to it.
struct BlockParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;

  static BlockParams create(ParamStore& store, const std::string& prefix, std::size_t width,
                            std::size_t mlp_ratio, Rng& rng, ParamGroup group = ParamGroup::backbone);
  /// Binds to parameters previously created under `prefix`.
  static BlockParams bind(const ParamStore& store, const std::string& prefix);
};

Tensor transformer_block(const Tensor& x, const BlockParams& params, std::size_t heads,
                         std::size_t groups = 1, const AttentionMask* mask = nullptr);

/// A stack of blocks sharing head count and mask.
class TransformerStack {
 public:
  TransformerStack() = default;
  TransformerStack(ParamStore& store, const std::string& prefix, std::size_t layers, std::size_t width,
                   std::size_t heads, std::size_t mlp_ratio, Rng& rng,
                   ParamGroup group = ParamGroup::backbone);

  /// Binds to blocks previously created under `prefix`.
  static TransformerStack bind(const ParamStore& store, const std::string& prefix, std::size_t layers,
                               std::size_t heads);

  Tensor forward(const Tensor& x, std::size_t groups, const AttentionMask* mask) const;
  std::size_t layers() const { return blocks_.size(); }
  std::size_t heads() const { return heads_; }
  const std::vector<BlockParams>& blocks() const { return blocks_; }

 private:
  std::vector<BlockParams> blocks_;
  std::size_t heads_ = 1;
};

} // namespace c4v
