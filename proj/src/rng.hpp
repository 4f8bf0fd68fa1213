#pragma once

#include <cstdint>

namespace progseg {

// PCG32 (Melissa O'Neill's pcg32_random_r). State transition:
//   state' = state * 6364136223846793005 + inc        (inc odd)
// output = 32-bit xorshift-rotate of the previous state.
// The sequence depends only on (seed, stream), so results are identical
// across platforms and build configurations.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0);

  uint32_t next_u32();
  uint64_t next_u64();

  // Unbiased integer in [0, n), n > 0. Rejection sampling.
  uint32_t uniform_int(uint32_t n);

  // Uniform float in [0, 1), 24-bit resolution.
  float uniform();
  float uniform(float lo, float hi);

  // Box-Muller from two uniforms in (0, 1]; the sine branch is discarded
  // so every draw consumes exactly two raw outputs.
  float normal(float mean = 0.0f, float stddev = 1.0f);

  bool bernoulli(float p);

  // Raw state access for checkpointing.
  uint64_t state() const { return state_; }
  uint64_t inc() const { return inc_; }
  static Rng from_state(uint64_t state, uint64_t inc);

 private:
  Rng() = default;
  uint64_t state_ = 0;
  uint64_t inc_ = 0;
};

}  // namespace progseg
