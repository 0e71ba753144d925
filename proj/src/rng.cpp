#include "cnfik/rng.hpp"

#include <cmath>

namespace cnfik {

static uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t mixSeed(uint64_t seed, uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ (0x6a09e667f3bcc909ULL + stream));
}

uint64_t mixSeed(uint64_t seed, uint64_t a, uint64_t b) {
  return mixSeed(mixSeed(seed, a), b);
}

double Rng::uniform(double lo, double hi) {
  const double u = static_cast<double>(gen_() >> 11) * 0x1.0p-53;  // [0, 1)
  return lo + (hi - lo) * u;
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  // Box-Muller on (0,1] to keep log() finite.
  const double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  cached_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

double Rng::rademacher() { return (gen_() & 1ULL) ? 1.0 : -1.0; }

}  // namespace cnfik
