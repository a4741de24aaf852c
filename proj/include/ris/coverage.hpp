#pragma once

// Call counters for the optional model paths, used to assert that a
// configuration with those paths switched off never enters them.

#include <atomic>
#include <cstddef>

namespace ris {

struct PathCoverage {
  std::atomic<std::size_t> guidance_encoder{0};
  std::atomic<std::size_t> mfa{0};
  std::atomic<std::size_t> mfa_guidance_projection{0};
  std::atomic<std::size_t> decoder_guidance_projection{0};

  void reset() {
    guidance_encoder = 0;
    mfa = 0;
    mfa_guidance_projection = 0;
    decoder_guidance_projection = 0;
  }

  std::size_t total() const {
    return guidance_encoder + mfa + mfa_guidance_projection + decoder_guidance_projection;
  }
};

inline PathCoverage& path_coverage() {
  static PathCoverage c;
  return c;
}

}  // namespace ris
