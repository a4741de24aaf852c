#pragma once

// Parameterised layers. Each layer registers its tensors in a ParameterStore
// under "<prefix>.<name>" and keeps handles that share their storage.

#include <string>
#include <vector>

#include "ris/attention.hpp"
#include "ris/ops.hpp"
#include "ris/parameter.hpp"

namespace ris::nn {

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out], may be undefined
  std::size_t in = 0, out = 0;

  static Linear make(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                     bool with_bias = true) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = store.add(prefix + ".weight", {in, out}, Init::fan_in(in));
    if (with_bias) l.bias = store.add(prefix + ".bias", {out}, Init::constant(0.0));
    return l;
  }

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }

  // 1x1 convolution on a [C x H x W] map.
  Tensor on_map(const Tensor& x) const {
    return tokens_to_chw(linear(chw_to_tokens(x), weight, bias), x.dim(1), x.dim(2));
  }
};

struct LayerNorm {
  Tensor gamma, beta;

  static LayerNorm make(ParameterStore& store, const std::string& prefix, std::size_t c) {
    return {store.add(prefix + ".gamma", {c}, Init::constant(1.0)), store.add(prefix + ".beta", {c}, Init::constant(0.0))};
  }

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

// groups = 8, or C when C < 8.
inline std::size_t default_groups(std::size_t channels) { return channels < 8 ? channels : 8; }

struct GroupNorm {
  Tensor gamma, beta;
  std::size_t groups = 1;

  static GroupNorm make(ParameterStore& store, const std::string& prefix, std::size_t c, std::size_t groups) {
    if (c % groups != 0)
      throw Error(ErrorCode::BadGroupCount, std::to_string(c) + " channels, " + std::to_string(groups) + " groups");
    return {store.add(prefix + ".gamma", {c}, Init::constant(1.0)), store.add(prefix + ".beta", {c}, Init::constant(0.0)),
            groups};
  }

  Tensor operator()(const Tensor& x) const { return group_norm(x, groups, gamma, beta); }
};

struct Conv3x3 {
  Tensor weight, bias;

  static Conv3x3 make(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out) {
    return {store.add(prefix + ".weight", {out, in, 3, 3}, Init::fan_in(in * 9)),
            store.add(prefix + ".bias", {out}, Init::constant(0.0))};
  }

  Tensor operator()(const Tensor& x) const { return conv3x3(x, weight, bias); }
};

// Pre-norm transformer block over a token matrix [N x C]:
//   x + proj(attn(LN(x))), then + fc2(gelu(fc1(LN(.)))).
// Which tokens see each other is decided by the attention groups handed to
// forward(), so the same block serves dense text attention and windowed
// image attention.
struct AttentionBlock {
  LayerNorm norm1, norm2;
  Linear q, k, v, proj, fc1, fc2;
  std::size_t channels = 0, heads = 1;

  static AttentionBlock make(ParameterStore& store, const std::string& prefix, std::size_t channels,
                             std::size_t heads, std::size_t mlp_ratio) {
    if (heads == 0 || channels % heads != 0)
      throw Error(ErrorCode::ConfigError,
                  prefix + ": " + std::to_string(heads) + " heads do not divide " + std::to_string(channels));
    AttentionBlock b;
    b.channels = channels;
    b.heads = heads;
    b.norm1 = LayerNorm::make(store, prefix + ".norm1", channels);
    b.q = Linear::make(store, prefix + ".attn.q", channels, channels);
    b.k = Linear::make(store, prefix + ".attn.k", channels, channels);
    b.v = Linear::make(store, prefix + ".attn.v", channels, channels);
    b.proj = Linear::make(store, prefix + ".attn.proj", channels, channels);
    b.norm2 = LayerNorm::make(store, prefix + ".norm2", channels);
    b.fc1 = Linear::make(store, prefix + ".mlp.fc1", channels, channels * mlp_ratio);
    b.fc2 = Linear::make(store, prefix + ".mlp.fc2", channels * mlp_ratio, channels);
    return b;
  }

  Tensor forward(const Tensor& x, const std::vector<AttentionGroup>& groups) const {
    const Tensor h = norm1(x);
    const Tensor a = grouped_attention(q(h), k(h), v(h), heads, groups);
    const Tensor x1 = add(x, proj(a));
    return add(x1, fc2(gelu(fc1(norm2(x1)))));
  }
};

}  // namespace ris::nn
