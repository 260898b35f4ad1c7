// linforms — deterministic counter-based random numbers.
//
// Every random draw is a pure function of (seed, stream, counter), so results
// are reproducible regardless of evaluation order and independent substreams
// can be handed to worker threads without locking.  The mixing function is
// the SplitMix64 finalizer (Steele, Lea & Flood, "Fast splittable
// pseudorandom number generators").
// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>

namespace linforms {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// A stateless generator: draw i of stream s under seed k is
/// mix(mix(k ^ mix(s)) + i).  Streams are cheap; use one per logical
/// purpose (one per sample block, one per calibration instance, ...).
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(detail::splitmix64(seed ^ detail::splitmix64(stream * 0xD1342543DE82EF95ULL + 1))) {}

  /// 64 uniform bits for counter i.
  std::uint64_t bits(std::uint64_t i) const { return detail::splitmix64(key_ + i * 0x9E3779B97F4A7C15ULL); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform(std::uint64_t i) const { return static_cast<double>(bits(i) >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(std::uint64_t i, double lo, double hi) const { return lo + (hi - lo) * uniform(i); }

  /// Uniform integer in [0, n); n must be positive.  Uses 64-bit modulo,
  /// bias is negligible for the n (< 2^32) used here.
  std::uint64_t index(std::uint64_t i, std::uint64_t n) const { return bits(i) % n; }

 private:
  std::uint64_t key_;
};

}  // namespace linforms
