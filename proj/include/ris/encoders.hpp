#pragma once

// Toy-scale encoders.
//
// Visual: four stages at strides 4, 8, 16, 32. Stage 1 merges 4x4 pixel
// patches and adds a learned projection of fixed sinusoidal coordinate
// features; later stages merge 2x2 neighbourhoods (LN + linear down to twice
// the previous width). Each stage then runs window-attention blocks whose
// windows alternate between plain and shifted tiling.
//
// Text: token + position embeddings, dense self-attention blocks that never
// attend to padding, final LN.

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "ris/config.hpp"
#include "ris/coverage.hpp"
#include "ris/text_prompt.hpp"
#include "ris/window.hpp"

namespace ris {

inline constexpr std::array<std::size_t, 4> kStageStrides{4, 8, 16, 32};

// V_1..V_4 (or P_1..P_4), each [C_i x H_i x W_i].
struct VisualPyramid {
  std::array<Tensor, 4> stages;
};

using GuidancePyramid = VisualPyramid;

inline void check_image_size(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw Error(ErrorCode::ShapeMismatch, "image must be [3 x H x W], got " + shape_string(image.shape()));
  if (image.dim(1) == 0 || image.dim(2) == 0 || image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
    throw Error(ErrorCode::BadImageSize,
                std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) + " is not a multiple of 32");
}

// sin/cos of pi*2^k*u for k=0..3 and u in {row, column}, u at pixel centres
// normalised to (0,1). [(H*W) x 16], independent of absolute image size.
inline Tensor coordinate_features(std::size_t h, std::size_t w) {
  constexpr std::size_t kFreq = 4;
  std::vector<double> f(h * w * 4 * kFreq);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double u[2] = {(y + 0.5) / static_cast<double>(h), (x + 0.5) / static_cast<double>(w)};
      double* row = &f[(y * w + x) * 4 * kFreq];
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t k = 0; k < kFreq; ++k) {
          const double t = std::numbers::pi * static_cast<double>(1u << k) * u[a];
          row[a * 2 * kFreq + 2 * k] = std::sin(t);
          row[a * 2 * kFreq + 2 * k + 1] = std::cos(t);
        }
    }
  return Tensor({h * w, 4 * kFreq}, std::move(f));
}

class VisualEncoder {
 public:
  VisualEncoder() = default;

  VisualEncoder(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg) {
    for (std::size_t s = 0; s < 4; ++s) {
      const std::string sp = prefix + ".stage" + std::to_string(s + 1);
      const std::size_t c = cfg.channels(s);
      Stage& st = stages_[s];
      if (s == 0) {
        st.embed = nn::Linear::make(store, sp + ".embed", 3 * 16, c);
        st.position = nn::Linear::make(store, sp + ".position", 16, c, false);
        st.embed_norm = nn::LayerNorm::make(store, sp + ".embed_norm", c);
      } else {
        st.embed_norm = nn::LayerNorm::make(store, sp + ".merge_norm", 4 * cfg.channels(s - 1));
        st.embed = nn::Linear::make(store, sp + ".merge", 4 * cfg.channels(s - 1), c, false);
      }
      for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b)
        st.blocks.push_back(WindowAttentionBlock::make(store, sp + ".block" + std::to_string(b), c, cfg.heads[s],
                                                       cfg.window, cfg.mlp_ratio));
      st.out_norm = nn::LayerNorm::make(store, sp + ".out_norm", c);
    }
  }

  VisualPyramid operator()(const Tensor& image) const {
    check_image_size(image);
    std::size_t h = image.dim(1), w = image.dim(2);
    VisualPyramid out;
    Tensor tokens = chw_to_tokens(image);
    for (std::size_t s = 0; s < 4; ++s) {
      const Stage& st = stages_[s];
      const std::size_t r = s == 0 ? 4 : 2;
      Tensor merged = patch_merge(tokens, h, w, r);
      h /= r;
      w /= r;
      if (s == 0) {
        tokens = st.embed_norm(add(st.embed(merged), st.position(coordinate_features(h, w))));
      } else {
        tokens = st.embed(st.embed_norm(merged));
      }
      for (std::size_t b = 0; b < st.blocks.size(); ++b) tokens = st.blocks[b].forward_tokens(tokens, h, w, b % 2 == 1);
      out.stages[s] = tokens_to_chw(st.out_norm(tokens), h, w);
    }
    return out;
  }

 private:
  struct Stage {
    nn::Linear embed, position;
    nn::LayerNorm embed_norm, out_norm;
    std::vector<WindowAttentionBlock> blocks;
  };
  std::array<Stage, 4> stages_;
};

// F_t stored transposed: tokens [T x C_t]; `mask` marks real tokens.
struct TextFeatures {
  Tensor tokens;
  std::vector<std::uint8_t> mask;

  // F_t as [C_t x T].
  Tensor matrix() const { return transpose(tokens); }
};

class TextEncoder {
 public:
  TextEncoder() = default;

  TextEncoder(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg) {
    const std::size_t c = cfg.text_channels;
    token_table_ = store.add(prefix + ".token_embedding", {cfg.vocab_size, c}, Init::normal(0.5));
    position_table_ = store.add(prefix + ".position_embedding", {cfg.max_len, c}, Init::normal(0.5));
    for (std::size_t l = 0; l < cfg.text_layers; ++l)
      blocks_.push_back(
          nn::AttentionBlock::make(store, prefix + ".block" + std::to_string(l), c, cfg.text_heads, cfg.mlp_ratio));
    final_norm_ = nn::LayerNorm::make(store, prefix + ".final_norm", c);
  }

  TextFeatures operator()(std::span<const int> ids, std::span<const std::uint8_t> mask) const {
    detail::require(ids.size() == mask.size(), "text_encode: ids and mask differ in length");
    detail::require(ids.size() <= position_table_.dim(0), "text_encode: sequence longer than max_len");
    const std::vector<AttentionGroup> groups{dense_group(ids.size(), mask)};
    detail::require(!groups[0].keys.empty(), "text_encode: no unmasked tokens");
    Tensor x = add(embedding(ids, token_table_), slice_rows(position_table_, 0, ids.size()));
    for (const auto& b : blocks_) x = b.forward(x, groups);
    return {final_norm_(x), std::vector<std::uint8_t>(mask.begin(), mask.end())};
  }

  TextFeatures operator()(const EncodedText& e) const { return (*this)(e.ids, e.mask); }

 private:
  Tensor token_table_, position_table_;
  std::vector<nn::AttentionBlock> blocks_;
  nn::LayerNorm final_norm_;
};

// Independent copy of the visual encoder architecture with its own store and
// seed; every parameter is frozen.
class GuidanceEncoder {
 public:
  GuidanceEncoder(const ModelConfig& cfg) : store_(cfg.guidance_seed), encoder_(store_, "guidance", cfg) {
    store_.freeze("");
  }

  GuidancePyramid operator()(const Tensor& image) const {
    ++path_coverage().guidance_encoder;
    return encoder_(image);
  }

  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const VisualEncoder& encoder() const { return encoder_; }

 private:
  ParameterStore store_;
  VisualEncoder encoder_;
};

}  // namespace ris
