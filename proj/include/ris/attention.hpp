#pragma once

// Scaled dot-product attention restricted to groups of rows.
//
// A group names the query rows and the key/value rows they may attend to.
// Dense attention is a single group; masked keys are simply left out of the
// key list, so they receive exactly zero weight. Windowed self-attention is
// one group per (possibly shifted) window, which is equivalent to zero-padding
// the grid to a multiple of the window, masking the padding and cropping.

#include <cmath>
#include <cstddef>
#include <vector>

#include "ris/ops.hpp"

namespace ris {

struct AttentionGroup {
  std::vector<std::size_t> queries;
  std::vector<std::size_t> keys;
};

// One group: every query row attends to the rows where key_mask is nonzero.
inline AttentionGroup dense_group(std::size_t n_queries, std::span<const std::uint8_t> key_mask) {
  AttentionGroup g;
  g.queries.resize(n_queries);
  for (std::size_t i = 0; i < n_queries; ++i) g.queries[i] = i;
  for (std::size_t j = 0; j < key_mask.size(); ++j)
    if (key_mask[j]) g.keys.push_back(j);
  return g;
}

inline AttentionGroup dense_group(std::size_t n_queries, std::size_t n_keys) {
  std::vector<std::uint8_t> all(n_keys, 1);
  return dense_group(n_queries, all);
}

// Partition of an h x w grid (row-major token order) into window x window
// tiles whose origin is offset by `shift` pixels up and left. Tiles that hang
// over the border only contain the in-grid pixels.
inline std::vector<AttentionGroup> window_groups(std::size_t h, std::size_t w, std::size_t window,
                                                 std::size_t shift) {
  if (window == 0) throw Error(ErrorCode::ConfigError, "window size must be positive");
  const std::size_t rows = (h + shift + window - 1) / window;
  const std::size_t cols = (w + shift + window - 1) / window;
  std::vector<AttentionGroup> groups(rows * cols);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      auto& g = groups[((y + shift) / window) * cols + (x + shift) / window];
      g.queries.push_back(y * w + x);
      g.keys.push_back(y * w + x);
    }
  std::erase_if(groups, [](const AttentionGroup& g) { return g.queries.empty(); });
  return groups;
}

// q [N x C], k [M x C], v [M x Cv] -> [N x Cv]. Channels are split into
// `heads` equal slices; scores are scaled by 1/sqrt(C/heads). Query rows that
// belong to no group produce zeros. When `weights` is given it receives the
// post-softmax weights as a dense [heads x N x M] array.
inline Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                                std::vector<AttentionGroup> groups, std::vector<double>* weights = nullptr) {
  using detail::RowMat;
  detail::require_rank(q, 2, "attention");
  detail::require_rank(k, 2, "attention");
  detail::require_rank(v, 2, "attention");
  const std::size_t n = q.dim(0), m = k.dim(0), c = q.dim(1), cv = v.dim(1);
  detail::require(k.dim(1) == c && v.dim(0) == m,
                  "attention: q " + shape_string(q.shape()) + " k " + shape_string(k.shape()) + " v " +
                      shape_string(v.shape()));
  detail::require(heads > 0 && c % heads == 0 && cv % heads == 0,
                  "attention: " + std::to_string(heads) + " heads do not divide channels");
  for (const auto& g : groups) {
    detail::require(!g.keys.empty(), "attention: group without keys");
    for (auto i : g.queries) detail::require(i < n, "attention: query index out of range");
    for (auto j : g.keys) detail::require(j < m, "attention: key index out of range");
  }
  const std::size_t d = c / heads, dv = cv / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  if (weights) weights->assign(heads * n * m, 0.0);
  std::vector<double> out(n * cv, 0.0);
  std::vector<RowMat> probs;
  probs.reserve(groups.size() * heads);

  const auto& qv = q.node()->value;
  const auto& kv = k.node()->value;
  const auto& vv = v.node()->value;
  for (const auto& g : groups) {
    const auto nq = static_cast<Eigen::Index>(g.queries.size());
    const auto nk = static_cast<Eigen::Index>(g.keys.size());
    for (std::size_t hd = 0; hd < heads; ++hd) {
      RowMat qg(nq, d), kg(nk, d), vg(nk, dv);
      for (Eigen::Index i = 0; i < nq; ++i)
        for (std::size_t t = 0; t < d; ++t) qg(i, t) = qv[g.queries[i] * c + hd * d + t];
      for (Eigen::Index j = 0; j < nk; ++j) {
        for (std::size_t t = 0; t < d; ++t) kg(j, t) = kv[g.keys[j] * c + hd * d + t];
        for (std::size_t t = 0; t < dv; ++t) vg(j, t) = vv[g.keys[j] * cv + hd * dv + t];
      }
      RowMat s = (qg * kg.transpose()) * scale;
      for (Eigen::Index i = 0; i < nq; ++i) {
        const double mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
      }
      const RowMat o = s * vg;
      for (Eigen::Index i = 0; i < nq; ++i)
        for (std::size_t t = 0; t < dv; ++t) out[g.queries[i] * cv + hd * dv + t] = o(i, t);
      if (weights) {
        for (Eigen::Index i = 0; i < nq; ++i)
          for (Eigen::Index j = 0; j < nk; ++j) (*weights)[(hd * n + g.queries[i]) * m + g.keys[j]] = s(i, j);
      }
      probs.push_back(std::move(s));
    }
  }

  auto fn = [groups = std::move(groups), probs = std::move(probs), heads, c, cv, d, dv,
             scale](detail::Node& self) {
    const auto& qv = detail::parent_value(self, 0);
    const auto& kv = detail::parent_value(self, 1);
    const auto& vv = detail::parent_value(self, 2);
    double* gq = detail::parent_grad(self, 0);
    double* gk = detail::parent_grad(self, 1);
    double* gv = detail::parent_grad(self, 2);
    std::size_t pi = 0;
    for (const auto& g : groups) {
      const auto nq = static_cast<Eigen::Index>(g.queries.size());
      const auto nk = static_cast<Eigen::Index>(g.keys.size());
      for (std::size_t hd = 0; hd < heads; ++hd, ++pi) {
        const RowMat& p = probs[pi];
        RowMat qg(nq, d), kg(nk, d), vg(nk, dv), dout(nq, dv);
        for (Eigen::Index i = 0; i < nq; ++i) {
          for (std::size_t t = 0; t < d; ++t) qg(i, t) = qv[g.queries[i] * c + hd * d + t];
          for (std::size_t t = 0; t < dv; ++t) dout(i, t) = self.grad[g.queries[i] * cv + hd * dv + t];
        }
        for (Eigen::Index j = 0; j < nk; ++j) {
          for (std::size_t t = 0; t < d; ++t) kg(j, t) = kv[g.keys[j] * c + hd * d + t];
          for (std::size_t t = 0; t < dv; ++t) vg(j, t) = vv[g.keys[j] * cv + hd * dv + t];
        }
        if (gv) {
          const RowMat dvg = p.transpose() * dout;
          for (Eigen::Index j = 0; j < nk; ++j)
            for (std::size_t t = 0; t < dv; ++t) gv[g.keys[j] * cv + hd * dv + t] += dvg(j, t);
        }
        if (!gq && !gk) continue;
        RowMat ds = dout * vg.transpose();
        for (Eigen::Index i = 0; i < nq; ++i) {
          const double dot = ds.row(i).dot(p.row(i));
          ds.row(i) = p.row(i).array() * (ds.row(i).array() - dot);
        }
        ds *= scale;
        if (gq) {
          const RowMat dq = ds * kg;
          for (Eigen::Index i = 0; i < nq; ++i)
            for (std::size_t t = 0; t < d; ++t) gq[g.queries[i] * c + hd * d + t] += dq(i, t);
        }
        if (gk) {
          const RowMat dk = ds.transpose() * qg;
          for (Eigen::Index j = 0; j < nk; ++j)
            for (std::size_t t = 0; t < d; ++t) gk[g.keys[j] * c + hd * d + t] += dk(j, t);
        }
      }
    }
  };
  return detail::make_result("attention", {n, cv}, std::move(out), {q, k, v}, std::move(fn));
}

}  // namespace ris
