// SPDX-License-Identifier: Apache-2.0
//
// Counter-based 64-bit generator. Output k of stream (key) is
//   mix(key + (k + 1) * 0x9E3779B97F4A7C15)
// where mix is the SplitMix64 finalizer
//   z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//   z ^= z >> 27; z *= 0x94D049BB133111EB;
//   z ^= z >> 31.
// Only integer arithmetic is involved, so sequences are identical on every
// platform. Reals in [0, 1) take the top 53 bits of an output.

#pragma once

#include <cstddef>
#include <cstdint>

namespace cac {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t splitmix_finalize(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

/// Key for an independent substream, e.g. (dataset seed, sample index).
constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream) {
  return splitmix_finalize(seed ^ splitmix_finalize(stream + kGoldenGamma));
}

class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

  constexpr std::uint64_t next_u64() { return splitmix_finalize(key_ + (++counter_) * kGoldenGamma); }

  /// Uniform in [0, 1).
  constexpr double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  constexpr double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound) by rejection; bound must be > 0.
  constexpr std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % bound;
  }

  /// Uniform integer in [lo, hi], inclusive.
  constexpr std::int64_t range(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  constexpr std::uint64_t key() const { return key_; }
  constexpr std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace cac
