#pragma once

#include <cstdint>
#include <string_view>

namespace aped {

/// Counter-based random generator.
///
/// Output n is splitmix64_mix(key + n * 0x9E3779B97F4A7C15), i.e. a pure
/// function of (key, counter). Streams never share state, so a record's
/// randomness depends only on the key it was derived from. All derived
/// distributions (uniform, normal, integer) are implemented here with plain
/// arithmetic so that results do not depend on the standard library's
/// distribution implementations.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer in [lo, hi] (inclusive).
  int range(int lo, int hi);
  /// Standard normal via Box-Muller (no cached second value).
  double normal();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z);

/// Derive a stream key from a seed and a label, e.g. ("param", "encoder.0.q.w").
std::uint64_t derive_key(std::uint64_t seed, std::string_view label);
std::uint64_t derive_key(std::uint64_t seed, std::string_view label, std::uint64_t index);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view text);

}  // namespace aped
