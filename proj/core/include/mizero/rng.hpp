#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace mizero {

/// Identifier embedded in evaluation reports so results can be reproduced
/// by any implementation of the same generator.
inline constexpr const char* kPrngId = "splitmix64/v1";

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ull;

/// SplitMix64 finalizer (Steele, Lea & Flood constants).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Sub-seed for item `index` of a stream keyed by `master`. Pure function,
/// identical across implementations: mix64(master + (index+1) * gamma).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(master + (index + 1) * kGoldenGamma);
}

/// SplitMix64 generator. Counter-based: output i of seed s is
/// mix64(s + (i+1)*gamma), so streams can be split or indexed at will.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += kGoldenGamma;
    return mix64(state_);
  }

  /// Uniform in [0, n). Uses next() mod n; the modulo bias is below 2^-53
  /// for the pool sizes this project draws from.
  std::uint64_t next_below(std::uint64_t n) { return next() % n; }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller, cosine branch only. Consumes exactly
  /// two 64-bit draws per sample; nothing is cached across calls.
  double next_gaussian() {
    const double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(next() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

}  // namespace mizero
