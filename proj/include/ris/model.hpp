#pragma once

// The full segmentation network: encoders, fusion, decoder and head, with
// checkpoint save/load.

#include <filesystem>
#include <memory>
#include <optional>

#include "ris/checkpoint.hpp"
#include "ris/config.hpp"
#include "ris/decoder.hpp"
#include "ris/encoders.hpp"
#include "ris/fusion.hpp"
#include "ris/text_prompt.hpp"

namespace ris {

// Tokens fed to the text encoder: the prompted form when the target prompt is
// enabled, the raw expression otherwise.
inline std::vector<std::string> model_tokens(const Expression& expr, const ModelConfig& cfg) {
  if (!cfg.use_target_prompt) return expr.tokens;
  return build_prompted_expression(expr, PromptTemplate::by_name(cfg.prompt_template)).full_tokens();
}

struct ForwardOutput {
  VisualPyramid visual;
  std::optional<GuidancePyramid> guidance;
  TextFeatures text;
  FusedFeatures fused;
  Tensor y1;
  Tensor logits;  // [2 x H x W]
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg), store_(cfg.seed) {
    cfg_.validate();
    visual_ = VisualEncoder(store_, "visual", cfg_);
    text_ = TextEncoder(store_, "text", cfg_);
    fusion_ = FusionParams::make(store_, "fusion", cfg_);
    decoder_ = DecoderParams::make(store_, "decoder", cfg_);
    if (cfg_.use_visual_guidance) guidance_.emplace(cfg_);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  GuidanceEncoder* guidance() { return guidance_ ? &*guidance_ : nullptr; }
  const GuidanceEncoder* guidance() const { return guidance_ ? &*guidance_ : nullptr; }
  const VisualEncoder& visual() const { return visual_; }
  const TextEncoder& text() const { return text_; }
  const FusionParams& fusion() const { return fusion_; }
  const DecoderParams& decoder() const { return decoder_; }

  // Trainable parameters plus the frozen guidance encoder.
  std::size_t census() const { return store_.census() + (guidance_ ? guidance_->store().census() : 0); }

  std::optional<GuidancePyramid> guidance_features(const Tensor& image) const {
    if (!guidance_) return std::nullopt;
    return (*guidance_)(image);
  }

  // `cached_guidance` skips the frozen encoder when its output is already known.
  ForwardOutput forward(const Tensor& image, const EncodedText& text,
                        const GuidancePyramid* cached_guidance = nullptr) const {
    ForwardOutput out;
    out.visual = visual_(image);
    const GuidancePyramid* guide = nullptr;
    if (guidance_) {
      if (cached_guidance) {
        guide = cached_guidance;
      } else {
        out.guidance = (*guidance_)(image);
        guide = &*out.guidance;
      }
    }
    out.text = text_(text);
    out.fused = fuse_all_stages(out.visual, guide, out.text, fusion_);
    out.y1 = decode(out.fused, guide, decoder_);
    out.logits = head_logits(out.y1, decoder_, image.dim(1), image.dim(2));
    return out;
  }

  Tensor loss(const Tensor& image, const EncodedText& text, std::span<const std::uint8_t> target,
              const GuidancePyramid* cached_guidance = nullptr) const {
    return cross_entropy_2class(forward(image, text, cached_guidance).logits, target);
  }

  MaskPrediction predict(const Tensor& image, const EncodedText& text,
                         const GuidancePyramid* cached_guidance = nullptr) const {
    NoGradGuard ng;
    return mask_from_logits(forward(image, text, cached_guidance).logits);
  }

  void capture(Checkpoint& ckpt) const {
    ckpt.meta["model"] = cfg_;
    capture_parameters(store_, ckpt);
    if (guidance_) capture_parameters(guidance_->store(), ckpt);
  }

  void restore(const Checkpoint& ckpt) {
    restore_parameters(store_, ckpt);
    if (guidance_) restore_parameters(guidance_->store(), ckpt);
  }

 private:
  ModelConfig cfg_;
  ParameterStore store_;
  VisualEncoder visual_;
  TextEncoder text_;
  FusionParams fusion_;
  DecoderParams decoder_;
  std::optional<GuidanceEncoder> guidance_;
};

}  // namespace ris
