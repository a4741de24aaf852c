#pragma once

// Cross-modal fusion.
//
// Pixel-word attention per stage:
//   Attn_i = softmax(W_iv(V_i) W_t(F_t)^T / sqrt(C_i))        [HW x T]
//   G_i    = Attn_i W_tv(F_t)                                 [HW x C_i]
//   V_i'   = G_i ⊙ W_im(V_i)
// W_tv is the value projection that makes G_i channel-shaped.
//
// Aggregation at stage 4:
//   V_aggre = W_o(swin_blocks([G_4; W_4(sg(P_4))])) ⊙ W_im(V_4)
// where swin_blocks is a plain + shifted window-attention pair and W_o maps
// back to C_4 channels.

#include <array>
#include <optional>
#include <vector>

#include "ris/config.hpp"
#include "ris/coverage.hpp"
#include "ris/encoders.hpp"
#include "ris/window.hpp"

namespace ris {

struct PixelWordAttention {
  std::vector<double> weights;  // [(H*W) x T], row-major
  std::size_t pixels = 0, tokens = 0;
  Tensor textmap;  // G_i [C_i x H_i x W_i]
};

struct PwamParams {
  nn::Linear vis_query;   // W_iv
  nn::Linear text_key;    // W_t
  nn::Linear text_value;  // W_tv
  nn::Linear vis_gate;    // W_im

  static PwamParams make(ParameterStore& store, const std::string& prefix, std::size_t c, std::size_t ct) {
    return {nn::Linear::make(store, prefix + ".vis_query", c, c), nn::Linear::make(store, prefix + ".text_key", ct, c),
            nn::Linear::make(store, prefix + ".text_value", ct, c), nn::Linear::make(store, prefix + ".vis_gate", c, c)};
  }
};

struct PwamOutput {
  PixelWordAttention attention;
  Tensor gate;   // W_im(V_i) [C_i x H_i x W_i]
  Tensor fused;  // V_i'
};

inline PwamOutput pixel_word_attention(const Tensor& v, const TextFeatures& text, const PwamParams& p) {
  detail::require_rank(v, 3, "pixel_word_attention");
  detail::require(text.tokens.rank() == 2 && text.tokens.dim(0) == text.mask.size(),
                  "pixel_word_attention: text features and mask disagree");
  const std::size_t c = v.dim(0), h = v.dim(1), w = v.dim(2);
  detail::require(p.vis_query.in == c, "pixel_word_attention: stage has " + std::to_string(c) +
                                           " channels, parameters expect " + std::to_string(p.vis_query.in));
  const Tensor vt = chw_to_tokens(v);
  PwamOutput out;
  out.attention.pixels = h * w;
  out.attention.tokens = text.mask.size();
  const Tensor g = grouped_attention(p.vis_query(vt), p.text_key(text.tokens), p.text_value(text.tokens), 1,
                                     {dense_group(h * w, text.mask)}, &out.attention.weights);
  const Tensor m = p.vis_gate(vt);
  out.attention.textmap = tokens_to_chw(g, h, w);
  out.gate = tokens_to_chw(m, h, w);
  out.fused = tokens_to_chw(mul(g, m), h, w);
  return out;
}

struct MfaParams {
  bool with_guidance = false;
  nn::Linear guide;  // W_4 on P_4
  std::array<WindowAttentionBlock, 2> blocks;
  nn::Linear out;    // back to C_4

  static MfaParams make(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg,
                        bool with_guidance) {
    const std::size_t c = cfg.channels(3);
    const std::size_t width = with_guidance ? 2 * c : c;
    MfaParams p;
    p.with_guidance = with_guidance;
    if (with_guidance) p.guide = nn::Linear::make(store, prefix + ".guide", c, c);
    for (std::size_t b = 0; b < 2; ++b)
      p.blocks[b] = WindowAttentionBlock::make(store, prefix + ".block" + std::to_string(b), width, cfg.heads[3],
                                               cfg.window, cfg.mlp_ratio);
    p.out = nn::Linear::make(store, prefix + ".out", width, c);
    return p;
  }
};

// textmap G_4, gate W_im(V_4), guidance P_4 (ignored unless the parameters
// were built with guidance). Output has the channel count of G_4.
inline Tensor mfa_aggregate(const Tensor& textmap, const Tensor& gate, const Tensor* guidance, const MfaParams& p) {
  detail::require_same_shape(textmap, gate, "mfa_aggregate");
  ++path_coverage().mfa;
  Tensor x = textmap;
  if (p.with_guidance) {
    detail::require(guidance && guidance->shape() == textmap.shape(), "mfa_aggregate: guidance map shape");
    ++path_coverage().mfa_guidance_projection;
    x = concat_channels({textmap, p.guide.on_map(stop_gradient(*guidance))});
  }
  x = window_self_attention(x, p.blocks[0], false);
  x = window_self_attention(x, p.blocks[1], true);
  return mul(p.out.on_map(x), gate);
}

struct FusionParams {
  std::array<PwamParams, 4> pwam;
  std::optional<MfaParams> mfa;

  static FusionParams make(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg) {
    FusionParams f;
    for (std::size_t s = 0; s < 4; ++s)
      f.pwam[s] = PwamParams::make(store, prefix + ".pwam" + std::to_string(s + 1), cfg.channels(s), cfg.text_channels);
    if (cfg.use_mfa) f.mfa = MfaParams::make(store, prefix + ".mfa", cfg, cfg.use_visual_guidance);
    return f;
  }
};

struct FusedFeatures {
  std::array<PwamOutput, 4> stages;  // stages[i].fused = V_{i+1}'
  Tensor aggregated;                 // V_aggre

  const Tensor& fused(std::size_t s) const { return stages[s].fused; }
};

inline FusedFeatures fuse_all_stages(const VisualPyramid& pyramid, const GuidancePyramid* guidance,
                                     const TextFeatures& text, const FusionParams& params) {
  FusedFeatures f;
  for (std::size_t s = 0; s < 4; ++s) f.stages[s] = pixel_word_attention(pyramid.stages[s], text, params.pwam[s]);
  if (params.mfa) {
    const Tensor* p4 = guidance ? &guidance->stages[3] : nullptr;
    f.aggregated = mfa_aggregate(f.stages[3].attention.textmap, f.stages[3].gate, p4, *params.mfa);
  } else {
    f.aggregated = f.stages[3].fused;
  }
  return f;
}

}  // namespace ris
