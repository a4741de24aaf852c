#pragma once

// Top-down decoder:
//   Y_4 = V_aggre
//   Y_i = rho_i([Up(Y_{i+1}); V_i'; W_p(sg(P_i))]),  i = 3, 2, 1
// rho_i = 2 x (conv3x3 -> group norm -> relu), output C_i channels.
// W_p maps C_i -> C_i/8 and only exists when visual guidance is on.
// Head: 1x1 projection to (background, foreground) logits, bilinear upsample
// to image resolution, softmax; a pixel is foreground iff p_fg > 0.5.

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "ris/config.hpp"
#include "ris/coverage.hpp"
#include "ris/encoders.hpp"
#include "ris/fusion.hpp"

namespace ris {

struct DecoderLevel {
  nn::Conv3x3 conv1, conv2;
  nn::GroupNorm norm1, norm2;
  std::optional<nn::Linear> guide;  // W_p

  Tensor rho(const Tensor& x) const { return relu(norm2(conv2(relu(norm1(conv1(x)))))); }
};

struct DecoderParams {
  std::array<DecoderLevel, 3> levels;  // levels[s] produces Y_{s+1}
  nn::Linear head;

  static DecoderParams make(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg) {
    DecoderParams d;
    for (std::size_t s = 3; s-- > 0;) {
      const std::size_t c = cfg.channels(s);
      const std::string lp = prefix + ".level" + std::to_string(s + 1);
      DecoderLevel& l = d.levels[s];
      std::size_t in = cfg.channels(s + 1) + c;
      if (cfg.use_visual_guidance) {
        l.guide = nn::Linear::make(store, lp + ".guide", c, c / 8);
        in += c / 8;
      }
      l.conv1 = nn::Conv3x3::make(store, lp + ".conv1", in, c);
      l.norm1 = nn::GroupNorm::make(store, lp + ".norm1", c, nn::default_groups(c));
      l.conv2 = nn::Conv3x3::make(store, lp + ".conv2", c, c);
      l.norm2 = nn::GroupNorm::make(store, lp + ".norm2", c, nn::default_groups(c));
    }
    d.head = nn::Linear::make(store, prefix + ".head", cfg.channels(0), 2);
    return d;
  }
};

struct DecoderState {
  std::array<Tensor, 4> y;  // y[s] = Y_{s+1}
};

// Returns Y_1. `guidance` must be non-null when the levels carry W_p.
inline Tensor decode(const FusedFeatures& fused, const GuidancePyramid* guidance, const DecoderParams& params,
                     DecoderState* state = nullptr) {
  Tensor y = fused.aggregated;
  if (state) state->y[3] = y;
  for (std::size_t s = 3; s-- > 0;) {
    const DecoderLevel& l = params.levels[s];
    std::vector<Tensor> parts{bilinear_upsample_2x(y), fused.fused(s)};
    if (l.guide) {
      detail::require(guidance != nullptr, "decode: guidance features required");
      ++path_coverage().decoder_guidance_projection;
      parts.push_back(l.guide->on_map(stop_gradient(guidance->stages[s])));
    }
    y = l.rho(concat_channels(parts));
    if (state) state->y[s] = y;
  }
  return y;
}

// [2 x H x W] logits at image resolution; channel 0 background, 1 foreground.
inline Tensor head_logits(const Tensor& y1, const DecoderParams& params, std::size_t image_h, std::size_t image_w) {
  detail::require_rank(y1, 3, "head_logits");
  detail::require(image_h % y1.dim(1) == 0 && image_w % y1.dim(2) == 0 &&
                      image_h / y1.dim(1) == image_w / y1.dim(2),
                  "head_logits: image size is not a uniform multiple of the feature map");
  return bilinear_upsample(params.head.on_map(y1), image_h / y1.dim(1));
}

struct MaskPrediction {
  std::size_t height = 0, width = 0;
  std::vector<double> prob;         // foreground probability, row-major
  std::vector<std::uint8_t> mask;   // prob > 0.5
};

inline MaskPrediction mask_from_logits(const Tensor& logits) {
  detail::require(logits.rank() == 3 && logits.dim(0) == 2, "mask_from_logits: expected [2 x H x W]");
  const std::size_t n = logits.dim(1) * logits.dim(2);
  MaskPrediction m{logits.dim(1), logits.dim(2), std::vector<double>(n), std::vector<std::uint8_t>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    // two-way softmax, written to stay finite for large logit gaps
    const double d = logits[i] - logits[n + i];
    m.prob[i] = d >= 0 ? std::exp(-d) / (1.0 + std::exp(-d)) : 1.0 / (1.0 + std::exp(d));
    m.mask[i] = m.prob[i] > 0.5 ? 1 : 0;
  }
  return m;
}

inline MaskPrediction predict_mask(const Tensor& y1, const DecoderParams& params, std::size_t image_h,
                                   std::size_t image_w) {
  return mask_from_logits(head_logits(y1, params, image_h, image_w));
}

}  // namespace ris
