#include "c4v/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace c4v {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MutMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Gradient buffer of input i, or nullptr when that input is constant.
std::vector<double>* input_grad(detail::Node& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

const std::vector<double>& input_value(const detail::Node& self, std::size_t i) {
  return self.inputs[i]->value;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

Shape matrix_shape(std::size_t rows, std::size_t cols) {
  return {rows, cols};
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw std::invalid_argument("matmul: inner extents differ " + shape_string(a.shape()) + " . " +
                                shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  as_matrix(out, m, n).noalias() = as_matrix(a.node()->value, m, k) * as_matrix(b.node()->value, k, n);
  return make_op(matrix_shape(m, n), std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto dc = as_matrix(std::as_const(self.grad), m, n);
    if (auto* ga = input_grad(self, 0)) {
      as_matrix(*ga, m, k).noalias() += dc * as_matrix(input_value(self, 1), k, n).transpose();
    }
    if (auto* gb = input_grad(self, 1)) {
      as_matrix(*gb, k, n).noalias() += as_matrix(input_value(self, 0), m, k).transpose() * dc;
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw std::invalid_argument("matmul_nt: widths differ " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  as_matrix(out, m, n).noalias() =
      as_matrix(a.node()->value, m, k) * as_matrix(b.node()->value, n, k).transpose();
  return make_op(matrix_shape(m, n), std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto dc = as_matrix(std::as_const(self.grad), m, n);
    if (auto* ga = input_grad(self, 0)) {
      as_matrix(*ga, m, k).noalias() += dc * as_matrix(input_value(self, 1), n, k);
    }
    if (auto* gb = input_grad(self, 1)) {
      as_matrix(*gb, n, k).noalias() += dc.transpose() * as_matrix(input_value(self, 0), m, k);
    }
  });
}

Tensor transpose(const Tensor& a) {
  const auto m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  as_matrix(out, n, m) = as_matrix(a.node()->value, m, n).transpose();
  return make_op(matrix_shape(n, m), std::move(out), {a}, [m, n](detail::Node& self) {
    if (auto* ga = input_grad(self, 0)) {
      as_matrix(*ga, m, n) += as_matrix(std::as_const(self.grad), n, m).transpose();
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] + bv[i];
  }
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = input_grad(self, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) {
          (*g)[i] += self.grad[i];
        }
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] - bv[i];
  }
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i];
      }
    }
    if (auto* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] -= self.grad[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] * bv[i];
  }
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = input_value(self, 0);
    const auto& bv = input_value(self, 1);
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i] * bv[i];
      }
    }
    if (auto* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i] * av[i];
      }
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) {
    v *= factor;
  }
  return make_op(a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i] * factor;
      }
    }
  });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) {
    throw std::invalid_argument("scale_by: factor must have one element");
  }
  const double factor = s.item();
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) {
    v *= factor;
  }
  return make_op(a.shape(), std::move(out), {a, s}, [](detail::Node& self) {
    const auto& av = input_value(self, 0);
    const double factor = input_value(self, 1)[0];
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i] * factor;
      }
    }
    if (auto* g = input_grad(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) {
        acc += self.grad[i] * av[i];
      }
      (*g)[0] += acc;
    }
  });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(av[i]);
  }
  return make_op(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i] * self.value[i];
      }
    }
  });
}

Tensor clamp_max(const Tensor& a, double hi) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) {
    v = std::min(v, hi);
  }
  return make_op(a.shape(), std::move(out), {a}, [hi](detail::Node& self) {
    const auto& av = input_value(self, 0);
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        if (av[i] < hi) {
          (*g)[i] += self.grad[i];
        }
      }
    }
  });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * std::numbers::sqrt2 / 2.0));
  }
  return make_op(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    const auto& av = input_value(self, 0);
    if (auto* g = input_grad(self, 0)) {
      const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double x = av[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
        (*g)[i] += self.grad[i] * (cdf + x * pdf);
      }
    }
  });
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  const auto rows = x.rows(), cols = x.cols();
  if (bias.numel() != cols) {
    throw std::invalid_argument("add_row: bias length " + std::to_string(bias.numel()) +
                                " != width " + std::to_string(cols));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto& bv = bias.node()->value;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] += bv[c];
    }
  }
  return make_op(x.shape(), std::move(out), {x, bias}, [rows, cols](detail::Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i];
      }
    }
    if (auto* g = input_grad(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          (*g)[c] += self.grad[r * cols + c];
        }
      }
    }
  });
}

Tensor add_tiled(const Tensor& x, const Tensor& pattern) {
  const auto cols = x.cols(), period = pattern.rows();
  if (pattern.cols() != cols || x.rows() % period != 0) {
    throw std::invalid_argument("add_tiled: pattern " + shape_string(pattern.shape()) +
                                " does not tile " + shape_string(x.shape()));
  }
  const auto block = period * cols;
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto& pv = pattern.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += pv[i % block];
  }
  return make_op(x.shape(), std::move(out), {x, pattern}, [block](detail::Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i];
      }
    }
    if (auto* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        (*g)[i % block] += self.grad[i];
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  auto y = matmul(x, w);
  return b.defined() ? add_row(y, b) : y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0.0)) {
    throw std::invalid_argument("layer_norm: eps must be positive");
  }
  const auto rows = x.rows(), cols = x.cols();
  if (gain.numel() != cols || bias.numel() != cols) {
    throw std::invalid_argument("layer_norm: affine parameters must have width " +
                                std::to_string(cols));
  }
  const auto& xv = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<double> out(xv.size());
  // Normalized activations and inverse deviations are kept for backward.
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      mu += row[c];
    }
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      var += (row[c] - mu) * (row[c] - mu);
    }
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (row[c] - mu) * inv_std[r];
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  return make_op(x.shape(), std::move(out), {x, gain, bias},
                 [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
                   const auto& gv = input_value(self, 1);
                   const auto& dy = self.grad;
                   if (auto* g = input_grad(self, 0)) {
                     const double n = static_cast<double>(cols);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double mean_d = 0.0, mean_dh = 0.0;
                       for (std::size_t c = 0; c < cols; ++c) {
                         const double d = dy[r * cols + c] * gv[c];
                         mean_d += d;
                         mean_dh += d * xhat[r * cols + c];
                       }
                       mean_d /= n;
                       mean_dh /= n;
                       for (std::size_t c = 0; c < cols; ++c) {
                         const double d = dy[r * cols + c] * gv[c];
                         (*g)[r * cols + c] += inv_std[r] * (d - mean_d - xhat[r * cols + c] * mean_dh);
                       }
                     }
                   }
                   if (auto* g = input_grad(self, 1)) {
                     for (std::size_t i = 0; i < dy.size(); ++i) {
                       (*g)[i % cols] += dy[i] * xhat[i];
                     }
                   }
                   if (auto* g = input_grad(self, 2)) {
                     for (std::size_t i = 0; i < dy.size(); ++i) {
                       (*g)[i % cols] += dy[i];
                     }
                   }
                 });
}

Tensor softmax(const Tensor& logits, std::size_t axis) {
  if (axis > 1 || logits.rank() > 2) {
    throw std::invalid_argument("softmax: axis must be 0 or 1 of a matrix");
  }
  const auto rows = logits.rows(), cols = logits.cols();
  // Lines are the slices being normalized: rows for axis 1, columns for axis 0.
  const auto lines = axis == 1 ? rows : cols;
  const auto length = axis == 1 ? cols : rows;
  const auto line_stride = axis == 1 ? cols : 1;
  const auto step = axis == 1 ? 1 : cols;
  const auto& xv = logits.node()->value;
  std::vector<double> out(xv.size());
  for (std::size_t l = 0; l < lines; ++l) {
    const auto base = l * line_stride;
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < length; ++i) {
      hi = std::max(hi, xv[base + i * step]);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < length; ++i) {
      const double e = std::exp(xv[base + i * step] - hi);
      out[base + i * step] = e;
      total += e;
    }
    for (std::size_t i = 0; i < length; ++i) {
      out[base + i * step] /= total;
    }
  }
  return make_op(logits.shape(), std::move(out), {logits},
                 [lines, length, line_stride, step](detail::Node& self) {
                   if (auto* g = input_grad(self, 0)) {
                     const auto& y = self.value;
                     const auto& dy = self.grad;
                     for (std::size_t l = 0; l < lines; ++l) {
                       const auto base = l * line_stride;
                       double dot = 0.0;
                       for (std::size_t i = 0; i < length; ++i) {
                         dot += y[base + i * step] * dy[base + i * step];
                       }
                       for (std::size_t i = 0; i < length; ++i) {
                         const auto k = base + i * step;
                         (*g)[k] += y[k] * (dy[k] - dot);
                       }
                     }
                   }
                 });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) {
    total += v;
  }
  return make_op({1}, {total}, {a}, [](detail::Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (auto& v : *g) {
        v += self.grad[0];
      }
    }
  });
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_op(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  const auto cols = x.cols();
  if (count == 0 || begin + count > x.rows()) {
    throw std::invalid_argument("slice_rows: range out of bounds");
  }
  const auto first = x.values().begin() + static_cast<std::ptrdiff_t>(begin * cols);
  std::vector<double> out(first, first + static_cast<std::ptrdiff_t>(count * cols));
  return make_op(matrix_shape(count, cols), std::move(out), {x}, [begin, cols](detail::Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        (*g)[begin * cols + i] += self.grad[i];
      }
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  const auto rows = x.rows(), cols = x.cols();
  if (count == 0 || begin + count > cols) {
    throw std::invalid_argument("slice_cols: range out of bounds");
  }
  std::vector<double> out(rows * count);
  const auto& xv = x.node()->value;
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(r * cols + begin), count,
                out.begin() + static_cast<std::ptrdiff_t>(r * count));
  }
  return make_op(matrix_shape(rows, count), std::move(out), {x}, [rows, cols, begin, count](detail::Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < count; ++c) {
          (*g)[r * cols + begin + c] += self.grad[r * count + c];
        }
      }
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  std::vector<RowRef> refs;
  refs.reserve(indices.size());
  for (auto i : indices) {
    refs.emplace_back(0, static_cast<std::uint32_t>(i));
  }
  return select_rows({x}, refs);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  std::vector<RowRef> refs;
  for (std::uint32_t p = 0; p < parts.size(); ++p) {
    for (std::uint32_t r = 0; r < parts[p].rows(); ++r) {
      refs.emplace_back(p, r);
    }
  }
  return select_rows(parts, refs);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const auto rows = a.rows(), ca = a.cols(), cb = b.cols();
  if (b.rows() != rows) {
    throw std::invalid_argument("concat_cols: row counts differ");
  }
  const auto cols = ca + cb;
  std::vector<double> out(rows * cols);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(r * ca), ca, out.begin() + static_cast<std::ptrdiff_t>(r * cols));
    std::copy_n(bv.begin() + static_cast<std::ptrdiff_t>(r * cb), cb,
                out.begin() + static_cast<std::ptrdiff_t>(r * cols + ca));
  }
  return make_op(matrix_shape(rows, cols), std::move(out), {a, b}, [rows, ca, cb, cols](detail::Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < ca; ++c) {
          (*g)[r * ca + c] += self.grad[r * cols + c];
        }
      }
    }
    if (auto* g = input_grad(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cb; ++c) {
          (*g)[r * cb + c] += self.grad[r * cols + ca + c];
        }
      }
    }
  });
}

Tensor select_rows(const std::vector<Tensor>& sources, std::span<const RowRef> refs) {
  if (sources.empty() || refs.empty()) {
    throw std::invalid_argument("select_rows: nothing to select");
  }
  const auto cols = sources.front().cols();
  for (const auto& s : sources) {
    if (s.cols() != cols) {
      throw std::invalid_argument("select_rows: sources differ in width");
    }
  }
  std::vector<double> out(refs.size() * cols);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& [src, row] = refs[i];
    if (src >= sources.size() || row >= sources[src].rows()) {
      throw std::invalid_argument("select_rows: reference out of range");
    }
    const auto& sv = sources[src].node()->value;
    std::copy_n(sv.begin() + static_cast<std::ptrdiff_t>(row * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  std::vector<RowRef> saved(refs.begin(), refs.end());
  return make_op(matrix_shape(refs.size(), cols), std::move(out), sources,
                 [cols, saved = std::move(saved)](detail::Node& self) {
                   for (std::size_t i = 0; i < saved.size(); ++i) {
                     const auto& [src, row] = saved[i];
                     if (auto* g = input_grad(self, src)) {
                       for (std::size_t c = 0; c < cols; ++c) {
                         (*g)[row * cols + c] += self.grad[i * cols + c];
                       }
                     }
                   }
                 });
}

Tensor group_mean(const Tensor& x, std::size_t groups, std::span<const std::uint8_t> valid) {
  const auto rows = x.rows(), cols = x.cols();
  if (groups == 0 || rows % groups != 0 || valid.size() != rows) {
    throw std::invalid_argument("group_mean: inconsistent grouping");
  }
  const auto length = rows / groups;
  std::vector<double> weight(rows, 0.0);
  for (std::size_t g = 0; g < groups; ++g) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < length; ++i) {
      count += valid[g * length + i] ? 1 : 0;
    }
    if (count == 0) {
      throw std::invalid_argument("group_mean: group " + std::to_string(g) + " has no valid rows");
    }
    for (std::size_t i = 0; i < length; ++i) {
      weight[g * length + i] = valid[g * length + i] ? 1.0 / static_cast<double>(count) : 0.0;
    }
  }
  const auto& xv = x.node()->value;
  std::vector<double> out(groups * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (weight[r] == 0.0) {
      continue;
    }
    const auto g = r / length;
    for (std::size_t c = 0; c < cols; ++c) {
      out[g * cols + c] += weight[r] * xv[r * cols + c];
    }
  }
  return make_op(matrix_shape(groups, cols), std::move(out), {x},
                 [cols, length, weight = std::move(weight)](detail::Node& self) {
                   if (auto* g = input_grad(self, 0)) {
                     for (std::size_t r = 0; r < weight.size(); ++r) {
                       if (weight[r] == 0.0) {
                         continue;
                       }
                       const auto grp = r / length;
                       for (std::size_t c = 0; c < cols; ++c) {
                         (*g)[r * cols + c] += weight[r] * self.grad[grp * cols + c];
                       }
                     }
                   }
                 });
}

Tensor l2_normalize_rows(const Tensor& x) {
  const auto rows = x.rows(), cols = x.cols();
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      sq += xv[r * cols + c] * xv[r * cols + c];
    }
    norms[r] = std::sqrt(sq);
    if (!(norms[r] > 1e-12)) {
      throw std::invalid_argument("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = xv[r * cols + c] / norms[r];
    }
  }
  return make_op(x.shape(), std::move(out), {x}, [rows, cols, norms = std::move(norms)](detail::Node& self) {
    if (auto* g = input_grad(self, 0)) {
      const auto& y = self.value;
      const auto& dy = self.grad;
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          dot += y[r * cols + c] * dy[r * cols + c];
        }
        for (std::size_t c = 0; c < cols; ++c) {
          const auto k = r * cols + c;
          (*g)[k] += (dy[k] - y[k] * dot) / norms[r];
        }
      }
    }
  });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets,
                          std::span<const std::uint8_t> allowed) {
  const auto rows = logits.rows(), cols = logits.cols();
  if (targets.size() != rows) {
    throw std::invalid_argument("cross_entropy_rows: one target per row required");
  }
  if (!allowed.empty() && allowed.size() != rows * cols) {
    throw std::invalid_argument("cross_entropy_rows: allowed mask has wrong size");
  }
  auto is_allowed = [&](std::size_t r, std::size_t c) { return allowed.empty() || allowed[r * cols + c]; };
  const auto& xv = logits.node()->value;
  // Softmax probabilities (zero where disallowed), kept for backward.
  std::vector<double> prob(xv.size(), 0.0);
  std::vector<std::size_t> saved_targets(targets.begin(), targets.end());
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto t = targets[r];
    if (t == kIgnoreTarget) {
      continue;
    }
    if (t >= cols || !is_allowed(r, t)) {
      throw std::invalid_argument("cross_entropy_rows: target out of range or masked in row " +
                                  std::to_string(r));
    }
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (is_allowed(r, c)) {
        hi = std::max(hi, xv[r * cols + c]);
      }
    }
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (is_allowed(r, c)) {
        const double e = std::exp(xv[r * cols + c] - hi);
        prob[r * cols + c] = e;
        z += e;
      }
    }
    for (std::size_t c = 0; c < cols; ++c) {
      prob[r * cols + c] /= z;
    }
    total += hi + std::log(z) - xv[r * cols + t];
    ++counted;
  }
  if (counted == 0) {
    throw std::invalid_argument("cross_entropy_rows: every row is ignored");
  }
  const double inv = 1.0 / static_cast<double>(counted);
  return make_op({1}, {total * inv}, {logits},
                 [cols, inv, prob = std::move(prob), saved_targets = std::move(saved_targets)](detail::Node& self) {
                   if (auto* g = input_grad(self, 0)) {
                     const double dl = self.grad[0] * inv;
                     for (std::size_t r = 0; r < saved_targets.size(); ++r) {
                       if (saved_targets[r] == kIgnoreTarget) {
                         continue;
                       }
                       for (std::size_t c = 0; c < cols; ++c) {
                         (*g)[r * cols + c] += dl * prob[r * cols + c];
                       }
                       (*g)[r * cols + saved_targets[r]] -= dl;
                     }
                   }
                 });
}

} // namespace c4v
