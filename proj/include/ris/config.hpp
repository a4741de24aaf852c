#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "json.hpp"

#include "ris/error.hpp"

namespace ris {

struct ModelConfig {
  std::size_t base_channels = 32;  // C_1; C_i = C_1 * 2^(i-1)
  std::size_t text_channels = 64;  // C_t
  std::array<std::size_t, 4> heads{1, 2, 4, 8};
  std::size_t window = 5;
  std::size_t max_len = 24;
  std::size_t mlp_ratio = 2;
  std::size_t blocks_per_stage = 2;
  std::size_t text_layers = 2;
  std::size_t text_heads = 2;
  std::size_t vocab_size = 2;

  bool use_target_prompt = true;
  bool use_mfa = true;
  bool use_visual_guidance = true;
  std::string prompt_template = "manual";

  std::uint64_t seed = 0;
  std::uint64_t guidance_seed = 17;

  std::size_t channels(std::size_t stage) const { return base_channels << stage; }  // stage 0..3

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw Error(ErrorCode::ConfigError, "model." + field + ": " + why);
    };
    if (base_channels < 8 || base_channels % 8 != 0) fail("base_channels", "must be a positive multiple of 8");
    if (text_channels == 0) fail("text_channels", "must be positive");
    if (window < 3 || window % 2 == 0) fail("window", "must be odd and >= 3");
    if (max_len == 0) fail("max_len", "must be positive");
    if (mlp_ratio == 0) fail("mlp_ratio", "must be positive");
    if (blocks_per_stage == 0) fail("blocks_per_stage", "must be positive");
    for (std::size_t i = 0; i < 4; ++i)
      if (heads[i] == 0 || channels(i) % heads[i] != 0)
        fail("heads", "stage " + std::to_string(i + 1) + " head count must divide " + std::to_string(channels(i)));
    if (text_heads == 0 || text_channels % text_heads != 0) fail("text_heads", "must divide text_channels");
    if (prompt_template != "manual" && prompt_template != "describes")
      fail("prompt_template", "expected manual or describes");
    if (vocab_size < 2) fail("vocab_size", "must include the pad and unknown ids");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"base_channels", c.base_channels},
       {"text_channels", c.text_channels},
       {"heads", c.heads},
       {"window", c.window},
       {"max_len", c.max_len},
       {"mlp_ratio", c.mlp_ratio},
       {"blocks_per_stage", c.blocks_per_stage},
       {"text_layers", c.text_layers},
       {"text_heads", c.text_heads},
       {"vocab_size", c.vocab_size},
       {"use_target_prompt", c.use_target_prompt},
       {"use_mfa", c.use_mfa},
       {"use_visual_guidance", c.use_visual_guidance},
       {"prompt_template", c.prompt_template},
       {"seed", c.seed},
       {"guidance_seed", c.guidance_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  c.base_channels = j.value("base_channels", c.base_channels);
  c.text_channels = j.value("text_channels", c.text_channels);
  c.heads = j.value("heads", c.heads);
  c.window = j.value("window", c.window);
  c.max_len = j.value("max_len", c.max_len);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.blocks_per_stage = j.value("blocks_per_stage", c.blocks_per_stage);
  c.text_layers = j.value("text_layers", c.text_layers);
  c.text_heads = j.value("text_heads", c.text_heads);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.use_target_prompt = j.value("use_target_prompt", c.use_target_prompt);
  c.use_mfa = j.value("use_mfa", c.use_mfa);
  c.use_visual_guidance = j.value("use_visual_guidance", c.use_visual_guidance);
  c.prompt_template = j.value("prompt_template", c.prompt_template);
  c.seed = j.value("seed", c.seed);
  c.guidance_seed = j.value("guidance_seed", c.guidance_seed);
}

}  // namespace ris
