#pragma once

#include <cstdint>
#include <random>

namespace cnfik {

/// Mixes a seed with stream identifiers (splitmix64 finalizer). Used to derive
/// independent per-iteration / per-sample streams from one base seed, so batch
/// work can run in any order or thread count and still reproduce bit-exactly.
uint64_t mixSeed(uint64_t seed, uint64_t stream);
uint64_t mixSeed(uint64_t seed, uint64_t a, uint64_t b);

/// Deterministic random source. Distribution functions are implemented on top
/// of the raw mt19937_64 stream instead of std::*_distribution so the values
/// do not depend on the standard library in use.
class Rng {
public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  /// Uniform on [lo, hi] with 53-bit resolution.
  double uniform(double lo, double hi);

  /// Standard normal (Box-Muller).
  double normal();

  /// +1 or -1 with equal probability.
  double rademacher();

  uint64_t bits() { return gen_(); }

private:
  std::mt19937_64 gen_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace cnfik
