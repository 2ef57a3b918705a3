#include "c4v/transformer.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "c4v/ops.hpp"

namespace c4v {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::OuterStride<>;
using ConstBlock = Eigen::Map<const RowMat, 0, Strided>;
using MutBlock = Eigen::Map<RowMat, 0, Strided>;

// View of rows [g*L, (g+1)*L) and head columns [h*dh, (h+1)*dh).
ConstBlock head_view(const std::vector<double>& v, std::size_t g, std::size_t h, std::size_t length,
                     std::size_t width, std::size_t dh) {
  return ConstBlock(v.data() + g * length * width + h * dh, static_cast<Eigen::Index>(length),
                    static_cast<Eigen::Index>(dh), Strided(static_cast<Eigen::Index>(width)));
}

MutBlock head_view(std::vector<double>& v, std::size_t g, std::size_t h, std::size_t length,
                   std::size_t width, std::size_t dh) {
  return MutBlock(v.data() + g * length * width + h * dh, static_cast<Eigen::Index>(length),
                  static_cast<Eigen::Index>(dh), Strided(static_cast<Eigen::Index>(width)));
}

} // namespace

AttentionMask::AttentionMask(std::size_t length, std::size_t groups, std::vector<std::uint8_t> allow)
    : length_(length), groups_(groups), allow_(std::move(allow)) {
  const auto patterns = groups_ == 0 ? 1 : groups_;
  if (length_ == 0 || allow_.size() != patterns * length_ * length_) {
    throw std::invalid_argument("attention mask size does not match length and groups");
  }
  for (std::size_t p = 0; p < patterns; ++p) {
    for (std::size_t q = 0; q < length_; ++q) {
      bool any = false;
      for (std::size_t k = 0; k < length_ && !any; ++k) {
        any = allow_[(p * length_ + q) * length_ + k] != 0;
      }
      if (!any) {
        throw std::invalid_argument("attention mask leaves query " + std::to_string(q) + " of group " +
                                    std::to_string(p) + " with no visible key");
      }
    }
  }
}

AttentionMask AttentionMask::causal(std::size_t length) {
  std::vector<std::uint8_t> allow(length * length, 0);
  for (std::size_t q = 0; q < length; ++q) {
    for (std::size_t k = 0; k <= q; ++k) {
      allow[q * length + k] = 1;
    }
  }
  return AttentionMask(length, 0, std::move(allow));
}

AttentionMask AttentionMask::key_padding(std::size_t length, std::span<const std::uint8_t> key_valid) {
  if (length == 0 || key_valid.size() % length != 0) {
    throw std::invalid_argument("key_padding: validity flags do not tile the length");
  }
  const auto groups = key_valid.size() / length;
  std::vector<std::uint8_t> allow(groups * length * length);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t q = 0; q < length; ++q) {
      for (std::size_t k = 0; k < length; ++k) {
        allow[(g * length + q) * length + k] = key_valid[g * length + k];
      }
    }
  }
  return AttentionMask(length, groups, std::move(allow));
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t groups,
                            std::size_t heads, const AttentionMask* mask) {
  const auto rows = q.rows(), width = q.cols();
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw std::invalid_argument("attention: q, k, v shapes differ");
  }
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("attention: width " + std::to_string(width) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (groups == 0 || rows % groups != 0) {
    throw std::invalid_argument("attention: rows do not split into groups");
  }
  const auto length = rows / groups;
  if (mask && (mask->length() != length || (mask->groups() != 0 && mask->groups() != groups))) {
    throw std::invalid_argument("attention: mask does not match sequence layout");
  }
  const auto dh = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& qv = q.node()->value;
  const auto& kv = k.node()->value;
  const auto& vv = v.node()->value;

  std::vector<double> out(rows * width, 0.0);
  // Attention probabilities per (group, head), needed by backward.
  std::vector<double> probs(groups * heads * length * length, 0.0);
  RowMat scores(length, length);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      auto qh = head_view(qv, g, h, length, width, dh);
      auto kh = head_view(kv, g, h, length, width, dh);
      auto vh = head_view(vv, g, h, length, width, dh);
      scores.noalias() = qh * kh.transpose();
      Eigen::Map<RowMat> p(probs.data() + (g * heads + h) * length * length, static_cast<Eigen::Index>(length),
                           static_cast<Eigen::Index>(length));
      for (std::size_t i = 0; i < length; ++i) {
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < length; ++j) {
          if (!mask || mask->allowed(g, i, j)) {
            hi = std::max(hi, scores(i, j) * inv_sqrt);
          }
        }
        double z = 0.0;
        for (std::size_t j = 0; j < length; ++j) {
          if (!mask || mask->allowed(g, i, j)) {
            const double e = std::exp(scores(i, j) * inv_sqrt - hi);
            p(i, j) = e;
            z += e;
          }
        }
        p.row(static_cast<Eigen::Index>(i)) /= z;
      }
      head_view(out, g, h, length, width, dh).noalias() = p * vh;
    }
  }

  return make_op({rows, width}, std::move(out), {q, k, v},
                 [groups, heads, length, width, dh, inv_sqrt, probs = std::move(probs)](detail::Node& self) {
                   auto* gq = self.inputs[0]->requires_grad ? &self.inputs[0]->grad_buffer() : nullptr;
                   auto* gk = self.inputs[1]->requires_grad ? &self.inputs[1]->grad_buffer() : nullptr;
                   auto* gv = self.inputs[2]->requires_grad ? &self.inputs[2]->grad_buffer() : nullptr;
                   const auto& qv = self.inputs[0]->value;
                   const auto& kv = self.inputs[1]->value;
                   const auto& vv = self.inputs[2]->value;
                   RowMat dp(length, length);
                   for (std::size_t g = 0; g < groups; ++g) {
                     for (std::size_t h = 0; h < heads; ++h) {
                       Eigen::Map<const RowMat> p(probs.data() + (g * heads + h) * length * length,
                                                  static_cast<Eigen::Index>(length),
                                                  static_cast<Eigen::Index>(length));
                       auto dout = head_view(std::as_const(self.grad), g, h, length, width, dh);
                       if (gv) {
                         head_view(*gv, g, h, length, width, dh).noalias() += p.transpose() * dout;
                       }
                       if (!gq && !gk) {
                         continue;
                       }
                       dp.noalias() = dout * head_view(vv, g, h, length, width, dh).transpose();
                       // dS = P .* (dP - rowsum(dP .* P)), then the 1/sqrt(dh) factor.
                       for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(length); ++i) {
                         const double dot = p.row(i).dot(dp.row(i));
                         dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix() * inv_sqrt;
                       }
                       if (gq) {
                         head_view(*gq, g, h, length, width, dh).noalias() +=
                             dp * head_view(kv, g, h, length, width, dh);
                       }
                       if (gk) {
                         head_view(*gk, g, h, length, width, dh).noalias() +=
                             dp.transpose() * head_view(qv, g, h, length, width, dh);
                       }
                     }
                   }
                 });
}

BlockParams BlockParams::create(ParamStore& store, const std::string& prefix, std::size_t width,
                                std::size_t mlp_ratio, Rng& rng, ParamGroup group) {
  const auto hidden = width * mlp_ratio;
  BlockParams p;
  p.ln1_gain = store.add_constant(prefix + ".ln1.gain", {width}, 1.0, group);
  p.ln1_bias = store.add_constant(prefix + ".ln1.bias", {width}, 0.0, group);
  p.wq = store.add_normal(prefix + ".attn.wq", {width, width}, rng, 0.02, group);
  p.bq = store.add_constant(prefix + ".attn.bq", {width}, 0.0, group);
  p.wk = store.add_normal(prefix + ".attn.wk", {width, width}, rng, 0.02, group);
  p.wv = store.add_normal(prefix + ".attn.wv", {width, width}, rng, 0.02, group);
  p.bv = store.add_constant(prefix + ".attn.bv", {width}, 0.0, group);
  p.wo = store.add_normal(prefix + ".attn.wo", {width, width}, rng, 0.02, group);
  p.bo = store.add_constant(prefix + ".attn.bo", {width}, 0.0, group);
  p.ln2_gain = store.add_constant(prefix + ".ln2.gain", {width}, 1.0, group);
  p.ln2_bias = store.add_constant(prefix + ".ln2.bias", {width}, 0.0, group);
  p.w1 = store.add_normal(prefix + ".mlp.w1", {width, hidden}, rng, 0.02, group);
  p.b1 = store.add_constant(prefix + ".mlp.b1", {hidden}, 0.0, group);
  p.w2 = store.add_normal(prefix + ".mlp.w2", {hidden, width}, rng, 0.02, group);
  p.b2 = store.add_constant(prefix + ".mlp.b2", {width}, 0.0, group);
  return p;
}

BlockParams BlockParams::bind(const ParamStore& store, const std::string& prefix) {
  BlockParams p;
  p.ln1_gain = store.get(prefix + ".ln1.gain");
  p.ln1_bias = store.get(prefix + ".ln1.bias");
  p.wq = store.get(prefix + ".attn.wq");
  p.bq = store.get(prefix + ".attn.bq");
  p.wk = store.get(prefix + ".attn.wk");
  p.wv = store.get(prefix + ".attn.wv");
  p.bv = store.get(prefix + ".attn.bv");
  p.wo = store.get(prefix + ".attn.wo");
  p.bo = store.get(prefix + ".attn.bo");
  p.ln2_gain = store.get(prefix + ".ln2.gain");
  p.ln2_bias = store.get(prefix + ".ln2.bias");
  p.w1 = store.get(prefix + ".mlp.w1");
  p.b1 = store.get(prefix + ".mlp.b1");
  p.w2 = store.get(prefix + ".mlp.w2");
  p.b2 = store.get(prefix + ".mlp.b2");
  return p;
}

Tensor transformer_block(const Tensor& x, const BlockParams& p, std::size_t heads, std::size_t groups,
                         const AttentionMask* mask) {
  auto h = layer_norm(x, p.ln1_gain, p.ln1_bias);
  auto q = linear(h, p.wq, p.bq);
  auto k = matmul(h, p.wk);
  auto v = linear(h, p.wv, p.bv);
  auto attn = multi_head_attention(q, k, v, groups, heads, mask);
  auto res = add(x, linear(attn, p.wo, p.bo));
  auto m = gelu(linear(layer_norm(res, p.ln2_gain, p.ln2_bias), p.w1, p.b1));
  return add(res, linear(m, p.w2, p.b2));
}

TransformerStack::TransformerStack(ParamStore& store, const std::string& prefix, std::size_t layers,
                                   std::size_t width, std::size_t heads, std::size_t mlp_ratio, Rng& rng,
                                   ParamGroup group)
    : heads_(heads) {
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("transformer: width " + std::to_string(width) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  for (std::size_t l = 0; l < layers; ++l) {
    blocks_.push_back(BlockParams::create(store, prefix + ".block" + std::to_string(l), width, mlp_ratio, rng, group));
  }
}

TransformerStack TransformerStack::bind(const ParamStore& store, const std::string& prefix, std::size_t layers,
                                        std::size_t heads) {
  TransformerStack s;
  s.heads_ = heads;
  for (std::size_t l = 0; l < layers; ++l) {
    s.blocks_.push_back(BlockParams::bind(store, prefix + ".block" + std::to_string(l)));
  }
  return s;
}

Tensor TransformerStack::forward(const Tensor& x, std::size_t groups, const AttentionMask* mask) const {
  Tensor h = x;
  for (const auto& block : blocks_) {
    h = transformer_block(h, block, heads_, groups, mask);
  }
  return h;
}

} // namespace c4v
