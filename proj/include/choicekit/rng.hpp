#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "choicekit/common.hpp"

namespace choicekit {

/// Deterministic random engine (xoshiro256** seeded through splitmix64).
///
/// The standard library's distributions are implementation-defined, which
/// breaks the bit-identical-reruns guarantee this project makes, so every
/// draw (uniform, normal, truncated normal, Gumbel, shuffle) is implemented
/// here with a fixed algorithm.  `substream` derives statistically
/// independent streams from a (seed, index) pair; generators that parallelize
/// over consumers draw each consumer from its own substream so the output is
/// identical no matter how the work is scheduled.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  static Rng substream(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t sm = seed;
    std::uint64_t a = splitmix64(sm);
    sm ^= 0x9e3779b97f4a7c15ULL + stream;
    std::uint64_t b = splitmix64(sm);
    Rng r(a ^ (b + 0x2545f4914f6cdd1dULL * (stream + 1)));
    return r;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) {
    require(bound > 0, "Rng::below: bound must be positive");
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  int uniform_int(int lo, int hi) {  // inclusive range
    require(lo <= hi, "Rng::uniform_int: empty range");
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Standard normal via Box-Muller; the paired draw is cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Standard Gumbel: -log(-log U), U in (0,1).
  double gumbel() {
    double u = uniform01();
    while (u <= 0.0) u = uniform01();
    return -std::log(-std::log(u));
  }

  /// Truncated normal on [lo, hi] by rejection.  Acceptance is high for the
  /// mild truncations used here; a pathological (far-tail) request still
  /// terminates but callers should not rely on it being fast.
  double truncated_normal(double mean, double sd, double lo, double hi) {
    require(lo < hi, "Rng::truncated_normal: lo must be < hi");
    require(sd > 0.0, "Rng::truncated_normal: sd must be positive");
    for (;;) {
      const double x = normal(mean, sd);
      if (x >= lo && x <= hi) return x;
    }
  }

  /// Categorical draw from probabilities that sum to ~1; returns an index.
  int categorical(const std::vector<double>& probs) {
    const double u = uniform01();
    double cum = 0.0;
    for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
      cum += probs[k];
      if (u < cum) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  /// Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  static std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<std::uint64_t, 4> state_{};
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace choicekit
