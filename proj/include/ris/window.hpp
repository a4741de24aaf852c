#pragma once

#include "ris/nn.hpp"

namespace ris {

struct WindowAttentionBlock {
  nn::AttentionBlock core;
  std::size_t window = 5;

  static WindowAttentionBlock make(ParameterStore& store, const std::string& prefix, std::size_t channels,
                                   std::size_t heads, std::size_t window, std::size_t mlp_ratio) {
    return {nn::AttentionBlock::make(store, prefix, channels, heads, mlp_ratio), window};
  }

  std::size_t shift_size() const { return window / 2; }

  Tensor forward_tokens(const Tensor& tokens, std::size_t h, std::size_t w, bool shifted) const {
    return core.forward(tokens, window_groups(h, w, window, shifted ? shift_size() : 0));
  }
};

// x [C x H x W] -> [C x H x W]. Attention runs independently inside each
// window x window tile; `shifted` offsets the tiling by window/2.
inline Tensor window_self_attention(const Tensor& x, const WindowAttentionBlock& block, bool shifted) {
  detail::require_rank(x, 3, "window_self_attention");
  const std::size_t h = x.dim(1), w = x.dim(2);
  return tokens_to_chw(block.forward_tokens(chw_to_tokens(x), h, w, shifted), h, w);
}

}  // namespace ris
