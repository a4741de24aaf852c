#pragma once

// Loop-level reference implementations used as oracles. They read parameter
// values out of the model structs but share no compute code with the library:
// windows are enumerated as explicit rectangles, attention is written per
// (query, key, head) and every projection is a triple loop.

#include <cmath>
#include <numbers>
#include <vector>

#include "ris/decoder.hpp"
#include "ris/fusion.hpp"

namespace ris::oracle {

// Row-major dense matrix.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

inline Mat from_tensor(const Tensor& t) {
  Mat m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = t[i];
  return m;
}

// [C x H x W] -> pixels x channels
inline Mat from_map(const Tensor& t) {
  const std::size_t c = t.dim(0), hw = t.dim(1) * t.dim(2);
  Mat m(hw, c);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) m(p, ch) = t[ch * hw + p];
  return m;
}

inline std::vector<double> to_map_values(const Mat& m) {
  std::vector<double> out(m.rows * m.cols);
  for (std::size_t p = 0; p < m.rows; ++p)
    for (std::size_t ch = 0; ch < m.cols; ++ch) out[ch * m.rows + p] = m(p, ch);
  return out;
}

inline Mat linear(const Mat& x, const nn::Linear& l) {
  Mat y(x.rows, l.out);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t o = 0; o < l.out; ++o) {
      double s = l.bias.defined() ? l.bias[o] : 0.0;
      for (std::size_t k = 0; k < l.in; ++k) s += x(i, k) * l.weight[k * l.out + o];
      y(i, o) = s;
    }
  return y;
}

inline Mat layer_norm(const Mat& x, const nn::LayerNorm& ln) {
  Mat y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += x(i, j);
    mean /= static_cast<double>(x.cols);
    for (std::size_t j = 0; j < x.cols; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(x.cols);
    for (std::size_t j = 0; j < x.cols; ++j)
      y(i, j) = (x(i, j) - mean) / std::sqrt(var + 1e-5) * ln.gamma[j] + ln.beta[j];
  }
  return y;
}

inline Mat add(const Mat& a, const Mat& b) {
  Mat y = a;
  for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += b.v[i];
  return y;
}

inline Mat gelu(const Mat& x) {
  Mat y = x;
  for (auto& e : y.v) e = 0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0)));
  return y;
}

// Multi-head attention where query i may see exactly the keys in visible[i].
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, std::size_t heads,
                     const std::vector<std::vector<std::size_t>>& visible) {
  const std::size_t d = q.cols / heads, dv = v.cols / heads;
  Mat out(q.rows, v.cols);
  for (std::size_t i = 0; i < q.rows; ++i) {
    if (visible[i].empty()) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<double> s;
      for (std::size_t j : visible[i]) {
        double dot = 0.0;
        for (std::size_t t = 0; t < d; ++t) dot += q(i, h * d + t) * k(j, h * d + t);
        s.push_back(dot / std::sqrt(static_cast<double>(d)));
      }
      double mx = s[0];
      for (double e : s) mx = std::max(mx, e);
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - mx));
      for (std::size_t n = 0; n < s.size(); ++n)
        for (std::size_t t = 0; t < dv; ++t) out(i, h * dv + t) += s[n] / z * v(visible[i][n], h * dv + t);
    }
  }
  return out;
}

inline Mat attention_block(const Mat& x, const nn::AttentionBlock& b,
                           const std::vector<std::vector<std::size_t>>& visible) {
  const Mat h = layer_norm(x, b.norm1);
  const Mat x1 = add(x, linear(attention(linear(h, b.q), linear(h, b.k), linear(h, b.v), b.heads, visible), b.proj));
  return add(x1, linear(gelu(linear(layer_norm(x1, b.norm2), b.fc1)), b.fc2));
}

// Window rectangles [y0, y0 + ws) x [x0, x0 + ws) starting at -shift; each
// pixel sees the in-grid pixels of its rectangle.
inline std::vector<std::vector<std::size_t>> window_visibility(std::size_t h, std::size_t w, std::size_t ws,
                                                               std::size_t shift) {
  std::vector<std::vector<std::size_t>> visible(h * w);
  const long H = static_cast<long>(h), W = static_cast<long>(w), S = static_cast<long>(ws);
  for (long y0 = -static_cast<long>(shift); y0 < H; y0 += S)
    for (long x0 = -static_cast<long>(shift); x0 < W; x0 += S) {
      std::vector<std::size_t> members;
      for (long y = std::max(0L, y0); y < std::min(H, y0 + S); ++y)
        for (long x = std::max(0L, x0); x < std::min(W, x0 + S); ++x)
          members.push_back(static_cast<std::size_t>(y * W + x));
      for (auto p : members) visible[p] = members;
    }
  return visible;
}

// [C x H x W] through one window block; returns pixels x channels.
inline Mat window_block(const Tensor& x, const WindowAttentionBlock& b, bool shifted) {
  return attention_block(from_map(x), b.core,
                         window_visibility(x.dim(1), x.dim(2), b.window, shifted ? b.window / 2 : 0));
}

struct Pwam {
  Mat weights;  // pixels x T (masked tokens 0)
  Mat textmap, gate, fused;  // pixels x C
};

inline Pwam pwam(const Tensor& v, const Tensor& text_tokens, const std::vector<std::uint8_t>& mask,
                 const PwamParams& p) {
  const Mat vis = from_map(v), txt = from_tensor(text_tokens);
  const Mat q = linear(vis, p.vis_query), k = linear(txt, p.text_key), val = linear(txt, p.text_value);
  const Mat gate = linear(vis, p.vis_gate);
  const std::size_t c = vis.cols;
  Pwam out{Mat(vis.rows, txt.rows), Mat(vis.rows, c), gate, Mat(vis.rows, c)};
  for (std::size_t i = 0; i < vis.rows; ++i) {
    double z = 0.0, mx = -1e300;
    std::vector<double> s(txt.rows, 0.0);
    for (std::size_t t = 0; t < txt.rows; ++t) {
      if (!mask[t]) continue;
      for (std::size_t ch = 0; ch < c; ++ch) s[t] += q(i, ch) * k(t, ch);
      s[t] /= std::sqrt(static_cast<double>(c));
      mx = std::max(mx, s[t]);
    }
    for (std::size_t t = 0; t < txt.rows; ++t)
      if (mask[t]) z += std::exp(s[t] - mx);
    for (std::size_t t = 0; t < txt.rows; ++t) {
      if (!mask[t]) continue;
      out.weights(i, t) = std::exp(s[t] - mx) / z;
      for (std::size_t ch = 0; ch < c; ++ch) out.textmap(i, ch) += out.weights(i, t) * val(t, ch);
    }
    for (std::size_t ch = 0; ch < c; ++ch) out.fused(i, ch) = out.textmap(i, ch) * gate(i, ch);
  }
  return out;
}

// Concat, plain window block, shifted window block, projection, gate.
inline Mat mfa(const Tensor& textmap, const Tensor& gate, const Tensor* guidance, const MfaParams& p) {
  const std::size_t h = textmap.dim(1), w = textmap.dim(2);
  Mat x = from_map(textmap);
  if (p.with_guidance) {
    const Mat g = linear(from_map(*guidance), p.guide);
    Mat cat(x.rows, x.cols + g.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
      for (std::size_t j = 0; j < x.cols; ++j) cat(i, j) = x(i, j);
      for (std::size_t j = 0; j < g.cols; ++j) cat(i, x.cols + j) = g(i, j);
    }
    x = cat;
  }
  for (std::size_t b = 0; b < 2; ++b)
    x = attention_block(x, p.blocks[b].core, window_visibility(h, w, p.blocks[b].window, b == 1 ? p.blocks[b].window / 2 : 0));
  Mat y = linear(x, p.out);
  const Mat gm = from_map(gate);
  for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] *= gm.v[i];
  return y;
}

inline double max_abs_diff(const std::vector<double>& a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : 1e300;
}

}  // namespace ris::oracle
