#pragma once

#include <cstdint>

namespace tokerase {

inline constexpr std::uint64_t kSeedGolden = 0x9e3779b97f4a7c15ULL;

/// SplitMix64 finalizer. This is the one bit mixer used everywhere a seed
/// has to be derived from another seed plus an index.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

/// Per-index seed derivation: seed_i = mix(seed, i). Deterministic and
/// collision-resistant enough to shard work by index range.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return mix64(seed + (index + 1) * kSeedGolden);
}

/// Deterministic PRNG (SplitMix64 stream). Not std::mt19937 on purpose:
/// the standard distributions are implementation-defined, this stream is
/// bit-stable across platforms and toolchains.
class Rng {
 public:
  explicit constexpr Rng(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next_u64() noexcept {
    state_ += kSeedGolden;
    return mix64(state_);
  }

  /// Uniform double in [0, 1), 53 random bits.
  constexpr double next_double() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). Rejection sampling on the top 32 bits,
  /// unbiased for any n >= 1.
  constexpr std::uint32_t next_below(std::uint32_t n) noexcept {
    const std::uint64_t span = 0x100000000ULL;
    const std::uint64_t limit = span - span % n;
    for (;;) {
      const std::uint64_t r = next_u64() >> 32;
      if (r < limit) return static_cast<std::uint32_t>(r % n);
    }
  }

  /// Uniform double in [-a, a).
  constexpr double next_symmetric(double a) noexcept {
    return (2.0 * next_double() - 1.0) * a;
  }

 private:
  std::uint64_t state_;
};

/// Uniform double in [0, 1) from a single hashed value. Used where a
/// decision must depend only on (seed, index), e.g. per-position token drop.
constexpr double hashed_unit(std::uint64_t seed, std::uint64_t index) noexcept {
  return static_cast<double>(mix_seed(seed, index) >> 11) * 0x1.0p-53;
}

}  // namespace tokerase
