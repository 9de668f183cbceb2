#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace fer {

/// splitmix64 finalizer. Used to expand seeds and to derive substream ids;
/// also handy as a general 64-bit hash for (epoch, record) style keys.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic PRNG: xoshiro256++ seeded through splitmix64.
///
/// The generator is fixed and documented so that (seed, stream) pairs yield
/// identical raw 64-bit sequences on every platform. Real-valued draws map
/// those bits through a fixed recipe (53-bit mantissa for uniforms,
/// Box-Muller for normals); they are bit-stable run to run on a given
/// platform and agree across platforms up to libm rounding.
///
/// Stream ids carve independent substreams out of one seed, e.g. one stream
/// per (epoch, record) in the data pipeline, so that work can be reordered
/// or parallelized without changing any drawn value.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::uint64_t x = seed ^ mix64(stream + 0x6a09e667f3bcc909ULL);
    for (auto& word : state_) {
      x += 0x9e3779b97f4a7c15ULL;
      word = mix64(x);
    }
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) {
      state_[0] = 0x9e3779b97f4a7c15ULL;  // xoshiro state must be nonzero
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1), 53 significant bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  bool bernoulli(double p) { return next_unit() < p; }

  /// Standard Box-Muller (cosine branch); consumes exactly two raw draws.
  double normal(double mean, double stddev) {
    const double u1 =
        static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    return mean + stddev * r * std::cos(two_pi * u2);
  }

  /// Uniform integer in [0, bound). Mask-and-reject, so unbiased.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    std::uint64_t mask = bound - 1;
    mask |= mask >> 1;
    mask |= mask >> 2;
    mask |= mask >> 4;
    mask |= mask >> 8;
    mask |= mask >> 16;
    mask |= mask >> 32;
    for (;;) {
      const std::uint64_t v = next_u64() & mask;
      if (v < bound) return v;
    }
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
};

/// Derives a substream id from up to three words. Documented so the data
/// pipeline's per-(epoch, record) streams are reproducible by construction.
constexpr std::uint64_t substream(std::uint64_t a, std::uint64_t b = 0,
                                  std::uint64_t c = 0) {
  return mix64(a ^ mix64(b ^ mix64(c)));
}

}  // namespace fer
