#pragma once

#include <cstdint>

namespace muxdec {

/// Counter-based pseudo-random generator. The i-th draw is a pure function of
/// (seed, i), so any slice of the sequence can be reproduced out of order and
/// the integer draw sequence is identical on every platform.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  /// splitmix64 finalizer.
  static constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  /// Combine two words into a well-mixed one (for deriving sub-streams).
  static constexpr std::uint64_t combine(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ mix64(b + 0x9E3779B97F4A7C15ull));
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t bits(std::uint64_t index) const {
    return mix64(seed_ + 0x9E3779B97F4A7C15ull * (index + 1));
  }

  /// Uniform double in [0, 1), 53 mantissa bits of the indexed draw.
  double unit(std::uint64_t index) const {
    return static_cast<double>(bits(index) >> 11) * 0x1.0p-53;
  }

  double uniform(std::uint64_t index, double lo, double hi) const {
    return lo + (hi - lo) * unit(index);
  }

  /// Independent generator for a tagged sub-stream.
  CounterRng derive(std::uint64_t tag) const { return CounterRng(combine(seed_, tag)); }

  // Stateful convenience for sequential consumers (trace generators, tests).
  std::uint64_t next_bits() { return bits(cursor_++); }
  double next_unit() { return unit(cursor_++); }
  double next_uniform(double lo, double hi) { return uniform(cursor_++, lo, hi); }
  std::uint64_t next_below(std::uint64_t n) { return n == 0 ? 0 : next_bits() % n; }

 private:
  std::uint64_t seed_;
  std::uint64_t cursor_ = 0;
};

}  // namespace muxdec
