#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "c4v/tensor.hpp"

namespace c4v {

// Matrix products. Operands are viewed as rows() x cols().
Tensor matmul(const Tensor& a, const Tensor& b);    // a . b
Tensor matmul_nt(const Tensor& a, const Tensor& b); // a . b^T
Tensor transpose(const Tensor& a);

// Elementwise, same shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// a * s where s is a one-element tensor (e.g. a learnable logit scale).
Tensor scale_by(const Tensor& a, const Tensor& s);
Tensor exp(const Tensor& a);
/// min(a, hi); the gradient is zero where the clamp is active.
Tensor clamp_max(const Tensor& a, double hi);
Tensor gelu(const Tensor& a);

/// Adds a length-cols() vector to every row.
Tensor add_row(const Tensor& x, const Tensor& bias);
/// Adds an L x D pattern to each consecutive block of L rows of x.
Tensor add_tiled(const Tensor& x, const Tensor& pattern);
/// x . w (+ b).  w is in x out.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Softmax of a matrix along axis 1 (each row) or axis 0 (each column).
Tensor softmax(const Tensor& logits, std::size_t axis = 1);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const Tensor& a, const Tensor& b);

/// Row `refs[i].second` of `sources[refs[i].first]` becomes output row i.
/// All sources share cols().
using RowRef = std::pair<std::uint32_t, std::uint32_t>;
Tensor select_rows(const std::vector<Tensor>& sources, std::span<const RowRef> refs);

/// x is groups*L x D; returns groups x D, the mean over rows whose `valid`
/// flag is set (valid has groups*L entries).  Throws if a group is empty.
Tensor group_mean(const Tensor& x, std::size_t groups, std::span<const std::uint8_t> valid);

/// Each row divided by its Euclidean norm.  Throws on a (numerically) zero row.
Tensor l2_normalize_rows(const Tensor& x);

constexpr std::size_t kIgnoreTarget = static_cast<std::size_t>(-1);

/// Mean softmax cross-entropy over rows with target != kIgnoreTarget.
/// `allowed`, when non-empty, has rows()*cols() flags; disallowed logits are
/// excluded from the normalizer.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets,
                          std::span<const std::uint8_t> allowed = {});

} // namespace c4v
