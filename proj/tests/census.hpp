#pragma once

#include "ris/config.hpp"

namespace ris::oracle {

// Independent parameter arithmetic from the config.
inline std::size_t expected_census(const ModelConfig& c, bool include_guidance) {
  auto block = [&](std::size_t ch) {
    const std::size_t hid = ch * c.mlp_ratio;
    return 2 * ch + 4 * (ch * ch + ch) + 2 * ch + (ch * hid + hid) + (hid * ch + ch);
  };
  auto visual = [&] {
    std::size_t n = 0;
    for (std::size_t s = 0; s < 4; ++s) {
      const std::size_t ch = c.channels(s);
      n += s == 0 ? 48 * ch + ch + 16 * ch + 2 * ch : 2 * 4 * c.channels(s - 1) + 4 * c.channels(s - 1) * ch;
      n += c.blocks_per_stage * block(ch) + 2 * ch;
    }
    return n;
  };
  const std::size_t ct = c.text_channels;
  std::size_t n = visual();
  n += c.vocab_size * ct + c.max_len * ct + c.text_layers * block(ct) + 2 * ct;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t ch = c.channels(s);
    n += 2 * (ch * ch + ch) + 2 * (ct * ch + ch);
  }
  const bool vg = c.use_visual_guidance;
  if (c.use_mfa) {
    const std::size_t c4 = c.channels(3), width = vg ? 2 * c4 : c4;
    n += (vg ? c4 * c4 + c4 : 0) + 2 * block(width) + width * c4 + c4;
  }
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t ch = c.channels(s), g = vg ? ch / 8 : 0;
    const std::size_t in = c.channels(s + 1) + ch + g;
    n += (vg ? ch * g + g : 0) + in * ch * 9 + ch + 2 * ch + ch * ch * 9 + ch + 2 * ch;
  }
  n += c.channels(0) * 2 + 2;
  if (vg && include_guidance) n += visual();
  return n;
}

}  // namespace ris::oracle
