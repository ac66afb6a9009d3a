#pragma once
// Deterministic random number generation. All randomness in the project flows
// through Rng (xoshiro256++) seeded via hash-derived substream keys, so every
// draw sequence is reproducible from (seed, role, indices) alone and is
// independent of platform library details.

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace linlab {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Folds a word list into one well-mixed 64-bit stream key.
inline std::uint64_t mix_key(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (std::uint64_t w : words) {
    std::uint64_t s = h ^ (w + 0x9e3779b97f4a7c15ULL);
    h = splitmix64_next(s);
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& w : s_) w = splitmix64_next(s);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0,1), 53-bit resolution.
  double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // Standard normal. Box-Muller cosine branch only, so the draw count is
  // always exactly two uniforms per call.
  double normal() {
    const double u1 = unit();
    const double u2 = unit();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Uniform integer in [0, n), n >= 1. Rejection-free modulo is fine here:
  // n is tiny relative to 2^64 in every use, and determinism matters more
  // than the ~2^-50 modulo bias.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

// Substream roles keep draw sequences for unrelated purposes disjoint even
// when they share (seed, epoch, batch, index) coordinates.
enum class StreamRole : std::uint64_t {
  model_init = 1,
  data_gen = 2,
  shuffle = 3,
  step = 4,        // per-example training-step stream: attack noise, x_a, x_b, alpha
  eval_attack = 5,
  probe = 6,
};

inline Rng make_stream(std::uint64_t seed, StreamRole role, std::uint64_t a = 0,
                       std::uint64_t b = 0, std::uint64_t c = 0) {
  return Rng(mix_key({seed, static_cast<std::uint64_t>(role), a, b, c}));
}

}  // namespace linlab
