#include "rng.hpp"

#include <cmath>

namespace progseg {

namespace {
constexpr uint64_t kMult = 6364136223846793005ull;
}

Rng::Rng(uint64_t seed, uint64_t stream) {
  inc_ = (stream << 1u) | 1u;
  state_ = 0;
  next_u32();
  state_ += seed;
  next_u32();
}

uint32_t Rng::next_u32() {
  uint64_t old = state_;
  state_ = old * kMult + inc_;
  uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
  uint32_t rot = static_cast<uint32_t>(old >> 59u);
  return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
}

uint64_t Rng::next_u64() {
  uint64_t hi = next_u32();
  uint64_t lo = next_u32();
  return (hi << 32) | lo;
}

uint32_t Rng::uniform_int(uint32_t n) {
  // Lemire-style rejection on the top of the range keeps the draw unbiased.
  uint32_t threshold = (-n) % n;
  for (;;) {
    uint32_t r = next_u32();
    if (r >= threshold) return r % n;
  }
}

float Rng::uniform() {
  return static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f);
}

float Rng::uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

float Rng::normal(float mean, float stddev) {
  // u1 in (0,1] so the log is finite.
  float u1 = (static_cast<float>(next_u32() >> 8) + 1.0f) * (1.0f / 16777216.0f);
  float u2 = static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f);
  float r = std::sqrt(-2.0f * std::log(u1));
  float theta = 6.28318530717958647692f * u2;
  return mean + stddev * r * std::cos(theta);
}

bool Rng::bernoulli(float p) { return uniform() < p; }

Rng Rng::from_state(uint64_t state, uint64_t inc) {
  Rng r;
  r.state_ = state;
  r.inc_ = inc;
  return r;
}

}  // namespace progseg
