#pragma once

// Differentiable primitives. Feature maps are channel-first [C x H x W];
// token matrices are row-major [N x C]. There is no implicit broadcasting:
// every binary op requires identical shapes.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ris/tensor.hpp"

namespace ris {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require(t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_string(t.shape()));
}

// While active, ops with a non-differentiable point fold the side of the kink
// each element falls on into `signature`. Two evaluations with different
// signatures straddle a kink.
struct KinkMonitor {
  bool active = false;
  std::uint64_t signature = 1469598103934665603ull;

  void fold(bool side) {
    signature ^= side ? 0x9e3779b97f4a7c15ull : 0x7f4a7c159e3779b9ull;
    signature *= 1099511628211ull;
  }
};
inline thread_local KinkMonitor kink_monitor;

inline ConstMatMap cmap(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MatMap map(double* p, std::size_t rows, std::size_t cols) {
  return MatMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  detail::require(numel(shape) == x.size(),
                  "reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  std::vector<double> v(x.data().begin(), x.data().end());
  return detail::make_result("reshape", std::move(shape), std::move(v), {x}, [](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j * m + i] = x[i * n + j];
  return detail::make_result("transpose", {n, m}, std::move(v), {x}, [m, n](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    }
  });
}

// [C x H x W] -> [(H*W) x C]
inline Tensor chw_to_tokens(const Tensor& x) {
  detail::require_rank(x, 3, "chw_to_tokens");
  return transpose(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

// [(H*W) x C] -> [C x H x W]
inline Tensor tokens_to_chw(const Tensor& x, std::size_t h, std::size_t w) {
  detail::require_rank(x, 2, "tokens_to_chw");
  detail::require(x.dim(0) == h * w, "tokens_to_chw: " + shape_string(x.shape()) + " is not " +
                                         std::to_string(h) + "x" + std::to_string(w) + " tokens");
  const std::size_t c = x.dim(1);
  return reshape(transpose(x), {c, h, w});
}

// Groups r x r neighbourhoods of a token grid into single tokens:
// [(H*W) x C] -> [((H/r)*(W/r)) x (r*r*C)], feature index (dy*r + dx)*C + c.
inline Tensor patch_merge(const Tensor& tokens, std::size_t h, std::size_t w, std::size_t r) {
  detail::require_rank(tokens, 2, "patch_merge");
  detail::require(tokens.dim(0) == h * w && r > 0 && h % r == 0 && w % r == 0,
                  "patch_merge: grid " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by " + std::to_string(r));
  const std::size_t c = tokens.dim(1), oh = h / r, ow = w / r, oc = r * r * c;
  // index[o] = flat source index feeding output element o
  std::vector<std::size_t> index(oh * ow * oc);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t dy = 0; dy < r; ++dy)
        for (std::size_t dx = 0; dx < r; ++dx)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t src = ((i * r + dy) * w + (j * r + dx)) * c + ch;
            index[(i * ow + j) * oc + (dy * r + dx) * c + ch] = src;
          }
  std::vector<double> v(index.size());
  for (std::size_t o = 0; o < index.size(); ++o) v[o] = tokens[index[o]];
  return detail::make_result("patch_merge", {oh * ow, oc}, std::move(v), {tokens},
                             [index = std::move(index)](detail::Node& self) {
                               if (double* g = detail::parent_grad(self, 0)) {
                                 for (std::size_t o = 0; o < index.size(); ++o) g[index[o]] += self.grad[o];
                               }
                             });
}

inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  detail::require_rank(x, 2, "slice_rows");
  detail::require(begin + count <= x.dim(0), "slice_rows out of range");
  const std::size_t c = x.dim(1);
  std::vector<double> v(x.data().begin() + begin * c, x.data().begin() + (begin + count) * c);
  return detail::make_result("slice_rows", {count, c}, std::move(v), {x}, [begin, c](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
    }
  });
}

// Row lookup: ids index rows of table [V x C] -> [T x C].
inline Tensor embedding(std::span<const int> ids, const Tensor& table) {
  detail::require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), c = table.dim(1);
  std::vector<int> rows(ids.begin(), ids.end());
  std::vector<double> v(rows.size() * c);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    detail::require(rows[t] >= 0 && static_cast<std::size_t>(rows[t]) < vocab,
                    "embedding id " + std::to_string(rows[t]) + " outside vocabulary");
    std::copy_n(table.data().begin() + rows[t] * c, c, v.begin() + t * c);
  }
  const std::size_t n = rows.size();
  return detail::make_result("embedding", {n, c}, std::move(v), {table},
                             [rows = std::move(rows), c](detail::Node& self) {
                               if (double* g = detail::parent_grad(self, 0)) {
                                 for (std::size_t t = 0; t < rows.size(); ++t)
                                   for (std::size_t k = 0; k < c; ++k) g[rows[t] * c + k] += self.grad[t * c + k];
                               }
                             });
}

// Channel-wise concatenation of [C_j x H x W] maps, in order.
inline Tensor concat_channels(const std::vector<Tensor>& xs) {
  detail::require(!xs.empty(), "concat_channels: no inputs");
  const std::size_t h = xs[0].dim(1), w = xs[0].dim(2);
  std::size_t c_total = 0;
  for (const auto& x : xs) {
    detail::require_rank(x, 3, "concat_channels");
    detail::require(x.dim(1) == h && x.dim(2) == w,
                    "concat_channels: spatial " + shape_string(x.shape()) + " vs " + shape_string(xs[0].shape()));
    c_total += x.dim(0);
  }
  std::vector<double> v;
  v.reserve(c_total * h * w);
  std::vector<std::size_t> offsets;
  for (const auto& x : xs) {
    offsets.push_back(v.size());
    v.insert(v.end(), x.data().begin(), x.data().end());
  }
  return detail::make_result("concat_channels", {c_total, h, w}, std::move(v), xs,
                             [offsets = std::move(offsets)](detail::Node& self) {
                               for (std::size_t i = 0; i < offsets.size(); ++i) {
                                 if (double* g = detail::parent_grad(self, i)) {
                                   const std::size_t n = self.parents[i]->value.size();
                                   for (std::size_t k = 0; k < n; ++k) g[k] += self.grad[offsets[i] + k];
                                 }
                               }
                             });
}

// Value passes through; no gradient ever flows back to x.
inline Tensor stop_gradient(const Tensor& x) {
  return Tensor(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), false, "stop_gradient");
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  return detail::make_result("add", a.shape(), std::move(v), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (double* g = detail::parent_grad(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
  return detail::make_result("sub", a.shape(), std::move(v), {a, b}, [](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  return detail::make_result("mul", a.shape(), std::move(v), {a, b}, [](detail::Node& self) {
    const auto& av = detail::parent_value(self, 0);
    const auto& bv = detail::parent_value(self, 1);
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += bv[i] * self.grad[i];
    if (double* g = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += av[i] * self.grad[i];
  });
}

inline Tensor scale(const Tensor& x, double s) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = s * x[i];
  return detail::make_result("scale", x.shape(), std::move(v), {x}, [s](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
  });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (detail::kink_monitor.active)
    for (std::size_t i = 0; i < v.size(); ++i) detail::kink_monitor.fold(x[i] > 0.0);
  return detail::make_result("relu", x.shape(), std::move(v), {x}, [](detail::Node& self) {
    const auto& xv = detail::parent_value(self, 0);
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (xv[i] > 0.0) g[i] += self.grad[i];
  });
}

// Exact (erf) GELU.
inline Tensor gelu(const Tensor& x) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
  return detail::make_result("gelu", x.shape(), std::move(v), {x}, [](detail::Node& self) {
    const auto& xv = detail::parent_value(self, 0);
    if (double* g = detail::parent_grad(self, 0)) {
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv[i] * xv[i]);
        g[i] += (cdf + xv[i] * pdf) * self.grad[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  detail::require(a.dim(1) == b.dim(0), "matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> v(m * n);
  detail::map(v.data(), m, n).noalias() =
      detail::cmap(a.node()->value, m, k) * detail::cmap(b.node()->value, k, n);
  return detail::make_result("matmul", {m, n}, std::move(v), {a, b}, [m, k, n](detail::Node& self) {
    const auto dc = detail::cmap(self.grad, m, n);
    if (double* g = detail::parent_grad(self, 0))
      detail::map(g, m, k).noalias() += dc * detail::cmap(detail::parent_value(self, 1), k, n).transpose();
    if (double* g = detail::parent_grad(self, 1))
      detail::map(g, k, n).noalias() += detail::cmap(detail::parent_value(self, 0), m, k).transpose() * dc;
  });
}

// Affine map over the last axis: x [.. x c_in] * W [c_in x c_out] + b [c_out].
// `b` may be undefined for a bias-free projection.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor()) {
  detail::require_rank(weight, 2, "linear");
  detail::require(x.rank() >= 1 && x.shape().back() == weight.dim(0),
                  "linear: input " + shape_string(x.shape()) + " vs weight " + shape_string(weight.shape()));
  const std::size_t cin = weight.dim(0), cout = weight.dim(1), rows = x.size() / cin;
  if (bias.defined()) {
    detail::require(bias.rank() == 1 && bias.dim(0) == cout,
                    "linear: bias " + shape_string(bias.shape()) + " for " + std::to_string(cout) + " outputs");
  }
  std::vector<double> v(rows * cout);
  auto out = detail::map(v.data(), rows, cout);
  out.noalias() = detail::cmap(x.node()->value, rows, cin) * detail::cmap(weight.node()->value, cin, cout);
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cout; ++c) v[r * cout + c] += bias[c];
  }
  Shape shape = x.shape();
  shape.back() = cout;
  auto fn = [rows, cin, cout](detail::Node& self) {
    const auto dy = detail::cmap(self.grad, rows, cout);
    if (double* g = detail::parent_grad(self, 0))
      detail::map(g, rows, cin).noalias() += dy * detail::cmap(detail::parent_value(self, 1), cin, cout).transpose();
    if (double* g = detail::parent_grad(self, 1))
      detail::map(g, cin, cout).noalias() += detail::cmap(detail::parent_value(self, 0), rows, cin).transpose() * dy;
    if (self.parents.size() > 2) {
      if (double* g = detail::parent_grad(self, 2))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cout; ++c) g[c] += self.grad[r * cout + c];
    }
  };
  if (bias.defined()) return detail::make_result("linear", std::move(shape), std::move(v), {x, weight, bias}, fn);
  return detail::make_result("linear", std::move(shape), std::move(v), {x, weight}, fn);
}

// ---------------------------------------------------------------------------
// Normalisation and softmax

inline Tensor softmax(const Tensor& x, std::size_t axis) {
  detail::require(axis < x.rank(), "softmax: axis " + std::to_string(axis) + " for " + shape_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  std::vector<double> v(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = x[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, x[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) total += (v[base + k * inner] = std::exp(x[base + k * inner] - mx));
      for (std::size_t k = 0; k < len; ++k) v[base + k * inner] /= total;
    }
  return detail::make_result("softmax", x.shape(), std::move(v), {x}, [outer, inner, len](detail::Node& self) {
    double* g = detail::parent_grad(self, 0);
    if (!g) return;
    const auto& y = self.value;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += y[base + k * inner] * self.grad[base + k * inner];
        for (std::size_t k = 0; k < len; ++k)
          g[base + k * inner] += y[base + k * inner] * (self.grad[base + k * inner] - dot);
      }
  });
}

namespace detail {

// Normalises contiguous segments of `segment` values to zero mean / unit
// variance, then applies per-channel affine parameters. channel_of(i) maps a
// flat index to its affine channel.
template <class ChannelOf>
Tensor segment_norm(const char* op, const Tensor& x, std::size_t segment, const Tensor& gamma,
                    const Tensor& beta, double eps, ChannelOf channel_of) {
  const std::size_t n = x.size(), segments = n / segment;
  std::vector<double> xhat(n), inv_std(segments);
  for (std::size_t s = 0; s < segments; ++s) {
    const double* p = x.data().data() + s * segment;
    double mean = 0.0;
    for (std::size_t i = 0; i < segment; ++i) mean += p[i];
    mean /= static_cast<double>(segment);
    double var = 0.0;
    for (std::size_t i = 0; i < segment; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<double>(segment);
    inv_std[s] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < segment; ++i) xhat[s * segment + i] = (p[i] - mean) * inv_std[s];
  }
  const bool affine = gamma.defined();
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = affine ? xhat[i] * gamma[channel_of(i)] + beta[channel_of(i)] : xhat[i];
  }
  auto fn = [xhat = std::move(xhat), inv_std = std::move(inv_std), segment, segments, affine,
             channel_of](Node& self) {
    std::vector<double> dxhat(self.grad);
    if (affine) {
      const auto& gv = parent_value(self, 1);
      for (std::size_t i = 0; i < dxhat.size(); ++i) dxhat[i] *= gv[channel_of(i)];
      if (double* g = parent_grad(self, 1))
        for (std::size_t i = 0; i < dxhat.size(); ++i) g[channel_of(i)] += self.grad[i] * xhat[i];
      if (double* g = parent_grad(self, 2))
        for (std::size_t i = 0; i < dxhat.size(); ++i) g[channel_of(i)] += self.grad[i];
    }
    double* g = parent_grad(self, 0);
    if (!g) return;
    const double inv_n = 1.0 / static_cast<double>(segment);
    for (std::size_t s = 0; s < segments; ++s) {
      const std::size_t base = s * segment;
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t i = 0; i < segment; ++i) {
        mean_d += dxhat[base + i];
        mean_dx += dxhat[base + i] * xhat[base + i];
      }
      mean_d *= inv_n;
      mean_dx *= inv_n;
      for (std::size_t i = 0; i < segment; ++i)
        g[base + i] += inv_std[s] * (dxhat[base + i] - mean_d - xhat[base + i] * mean_dx);
    }
  };
  if (affine) return make_result(op, x.shape(), std::move(v), {x, gamma, beta}, std::move(fn));
  return make_result(op, x.shape(), std::move(v), {x}, std::move(fn));
}

}  // namespace detail

// Normalises over the last (channel) axis. gamma/beta are [C] or both undefined.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma = Tensor(), const Tensor& beta = Tensor(),
                         double eps = 1e-5) {
  detail::require(x.rank() >= 1, "layer_norm on a scalar");
  const std::size_t c = x.shape().back();
  if (gamma.defined()) {
    detail::require(gamma.shape() == Shape{c} && beta.defined() && beta.shape() == Shape{c},
                    "layer_norm: affine parameters must be [" + std::to_string(c) + "]");
  }
  return detail::segment_norm("layer_norm", x, c, gamma, beta, eps, [c](std::size_t i) { return i % c; });
}

// Group normalisation of a [C x H x W] map; statistics per group of C/groups channels.
inline Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma = Tensor(),
                         const Tensor& beta = Tensor(), double eps = 1e-5) {
  detail::require_rank(x, 3, "group_norm");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (groups == 0 || c % groups != 0) {
    throw Error(ErrorCode::BadGroupCount,
                std::to_string(c) + " channels cannot be split into " + std::to_string(groups) + " groups");
  }
  if (gamma.defined()) {
    detail::require(gamma.shape() == Shape{c} && beta.defined() && beta.shape() == Shape{c},
                    "group_norm: affine parameters must be [" + std::to_string(c) + "]");
  }
  return detail::segment_norm("group_norm", x, (c / groups) * hw, gamma, beta, eps,
                              [hw](std::size_t i) { return i / hw; });
}

// ---------------------------------------------------------------------------
// Spatial

namespace detail {

struct LerpTap {
  std::size_t lo, hi;
  double w_lo, w_hi;
};

// Half-pixel-centre source taps for resizing `in` samples to `in * factor`.
inline std::vector<LerpTap> bilinear_taps(std::size_t in, std::size_t factor) {
  std::vector<LerpTap> taps(in * factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    src = std::max(src, 0.0);
    const auto lo = std::min(static_cast<std::size_t>(src), in - 1);
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double frac = src - static_cast<double>(lo);
    taps[o] = {lo, hi, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace detail

// Bilinear resize of [C x H x W] by an integer factor (align_corners = false).
inline Tensor bilinear_upsample(const Tensor& x, std::size_t factor) {
  detail::require_rank(x, 3, "bilinear_upsample");
  detail::require(factor >= 1 && x.dim(1) >= 1 && x.dim(2) >= 1, "bilinear_upsample: empty input");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), oh = h * factor, ow = w * factor;
  auto ty = detail::bilinear_taps(h, factor);
  auto tx = detail::bilinear_taps(w, factor);
  std::vector<double> v(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = x.data().data() + ch * h * w;
    double* dst = v.data() + ch * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      const auto& a = ty[i];
      for (std::size_t j = 0; j < ow; ++j) {
        const auto& b = tx[j];
        dst[i * ow + j] = a.w_lo * (b.w_lo * src[a.lo * w + b.lo] + b.w_hi * src[a.lo * w + b.hi]) +
                          a.w_hi * (b.w_lo * src[a.hi * w + b.lo] + b.w_hi * src[a.hi * w + b.hi]);
      }
    }
  }
  return detail::make_result(
      "bilinear_upsample", {c, oh, ow}, std::move(v), {x},
      [ty = std::move(ty), tx = std::move(tx), c, h, w, oh, ow](detail::Node& self) {
        double* g = detail::parent_grad(self, 0);
        if (!g) return;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double* gs = g + ch * h * w;
          const double* gd = self.grad.data() + ch * oh * ow;
          for (std::size_t i = 0; i < oh; ++i) {
            const auto& a = ty[i];
            for (std::size_t j = 0; j < ow; ++j) {
              const auto& b = tx[j];
              const double d = gd[i * ow + j];
              gs[a.lo * w + b.lo] += a.w_lo * b.w_lo * d;
              gs[a.lo * w + b.hi] += a.w_lo * b.w_hi * d;
              gs[a.hi * w + b.lo] += a.w_hi * b.w_lo * d;
              gs[a.hi * w + b.hi] += a.w_hi * b.w_hi * d;
            }
          }
        }
      });
}

inline Tensor bilinear_upsample_2x(const Tensor& x) { return bilinear_upsample(x, 2); }

// 3x3 convolution, stride 1, zero padding 1.
// x [C_in x H x W], weight [C_out x C_in x 3 x 3], bias [C_out] (optional).
inline Tensor conv3x3(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor()) {
  detail::require_rank(x, 3, "conv3x3");
  detail::require(weight.rank() == 4 && weight.dim(1) == x.dim(0) && weight.dim(2) == 3 && weight.dim(3) == 3,
                  "conv3x3: input " + shape_string(x.shape()) + " vs weight " + shape_string(weight.shape()));
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = weight.dim(0), hw = h * w;
  if (bias.defined()) detail::require(bias.shape() == Shape{cout}, "conv3x3: bias shape");
  const std::size_t k = cin * 9;
  // im2col: row (ci*9 + ky*3 + kx), column (y*w + x)
  std::vector<double> cols(k * hw, 0.0);
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* row = cols.data() + (ci * 9 + ky * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const long sx = static_cast<long>(xx) + static_cast<long>(kx) - 1;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            row[y * w + xx] = x[ci * hw + static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
          }
        }
      }
  std::vector<double> v(cout * hw);
  detail::map(v.data(), cout, hw).noalias() = detail::cmap(weight.node()->value, cout, k) * detail::cmap(cols, k, hw);
  if (bias.defined())
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t i = 0; i < hw; ++i) v[co * hw + i] += bias[co];
  auto fn = [cols = std::move(cols), cin, h, w, cout, k, hw](detail::Node& self) {
    const auto dy = detail::cmap(self.grad, cout, hw);
    if (double* g = detail::parent_grad(self, 1))
      detail::map(g, cout, k).noalias() += dy * detail::cmap(cols, k, hw).transpose();
    if (self.parents.size() > 2) {
      if (double* g = detail::parent_grad(self, 2))
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t i = 0; i < hw; ++i) g[co] += self.grad[co * hw + i];
    }
    if (double* g = detail::parent_grad(self, 0)) {
      detail::RowMat dcols = detail::cmap(detail::parent_value(self, 1), cout, k).transpose() * dy;
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const double* row = dcols.data() + (ci * 9 + ky * 3 + kx) * hw;
            for (std::size_t y = 0; y < h; ++y) {
              const long sy = static_cast<long>(y) + static_cast<long>(ky) - 1;
              if (sy < 0 || sy >= static_cast<long>(h)) continue;
              for (std::size_t xx = 0; xx < w; ++xx) {
                const long sx = static_cast<long>(xx) + static_cast<long>(kx) - 1;
                if (sx < 0 || sx >= static_cast<long>(w)) continue;
                g[ci * hw + static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] += row[y * w + xx];
              }
            }
          }
    }
  };
  if (bias.defined()) return detail::make_result("conv3x3", {cout, h, w}, std::move(v), {x, weight, bias}, fn);
  return detail::make_result("conv3x3", {cout, h, w}, std::move(v), {x, weight}, fn);
}

// ---------------------------------------------------------------------------
// Reductions and losses

namespace detail {

// Neumaier compensated summation; losses are averages over thousands of
// pixels and finite-difference checks need them accurate to a few ulp.
struct AccurateSum {
  double sum = 0.0, carry = 0.0;
  void add(double v) {
    const double t = sum + v;
    carry += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + carry; }
};

// log(1 + exp(z)) without overflow or cancellation.
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace detail

inline Tensor sum(const Tensor& x) {
  detail::AccurateSum acc;
  for (double v : x.data()) acc.add(v);
  const double total = acc.value();
  return detail::make_result("sum", {1}, {total}, {x}, [](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// sum_i x_i * w_i for a constant weight vector (used as a random probe).
inline Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  detail::require(weights.size() == x.size(), "weighted_sum: weight count");
  std::vector<double> w(weights.begin(), weights.end());
  detail::AccurateSum acc;
  for (std::size_t i = 0; i < w.size(); ++i) acc.add(x[i] * w[i]);
  return detail::make_result("weighted_sum", {1}, {acc.value()}, {x}, [w = std::move(w)](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < w.size(); ++i) g[i] += w[i] * self.grad[0];
  });
}

// Mean squared error against a constant target.
inline Tensor mse_loss(const Tensor& x, std::span<const double> target) {
  detail::require(target.size() == x.size(), "mse_loss: target size");
  std::vector<double> diff(x.size());
  detail::AccurateSum acc;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = x[i] - target[i];
    acc.add(diff[i] * diff[i]);
  }
  const double inv_n = 1.0 / static_cast<double>(diff.size());
  return detail::make_result("mse_loss", {1}, {acc.value() * inv_n}, {x},
                             [diff = std::move(diff), inv_n](detail::Node& self) {
                               if (double* g = detail::parent_grad(self, 0))
                                 for (std::size_t i = 0; i < diff.size(); ++i)
                                   g[i] += 2.0 * diff[i] * inv_n * self.grad[0];
                             });
}

// Mean over pixels of -log softmax(logits)[target]. Channel 0 is background,
// channel 1 foreground; target holds 0/1 per pixel in row-major order.
inline Tensor cross_entropy_2class(const Tensor& logits, std::span<const std::uint8_t> target) {
  detail::require(logits.rank() == 3 && logits.dim(0) == 2, "cross_entropy_2class: logits " + shape_string(logits.shape()));
  const std::size_t hw = logits.dim(1) * logits.dim(2);
  detail::require(target.size() == hw, "cross_entropy_2class: target has " + std::to_string(target.size()) +
                                           " pixels, logits " + std::to_string(hw));
  std::vector<double> fg_prob(hw);
  std::vector<std::uint8_t> t(target.begin(), target.end());
  detail::AccurateSum acc;
  for (std::size_t i = 0; i < hw; ++i) {
    const double bg = logits[i], fg = logits[hw + i];
    acc.add(t[i] ? detail::softplus(bg - fg) : detail::softplus(fg - bg));
    fg_prob[i] = 1.0 / (1.0 + std::exp(bg - fg));
  }
  const double inv_n = 1.0 / static_cast<double>(hw);
  return detail::make_result("cross_entropy_2class", {1}, {acc.value() * inv_n}, {logits},
                             [fg_prob = std::move(fg_prob), t = std::move(t), hw, inv_n](detail::Node& self) {
                               double* g = detail::parent_grad(self, 0);
                               if (!g) return;
                               const double s = self.grad[0] * inv_n;
                               for (std::size_t i = 0; i < hw; ++i) {
                                 const double dfg = fg_prob[i] - (t[i] ? 1.0 : 0.0);
                                 g[hw + i] += s * dfg;
                                 g[i] -= s * dfg;
                               }
                             });
}

}  // namespace ris
