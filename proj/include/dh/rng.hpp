#pragma once

#include <cstdint>
#include <random>

namespace dh {

// Deterministic RNG wrapper. All draws are derived from the raw engine output
// with fixed arithmetic so that identical seeds give identical sequences on
// any platform, independent of the standard library's distribution code.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [a, b]; degenerate ranges return a exactly.
  double uniform(double a, double b) {
    if (a == b) return a;
    return a + (b - a) * uniform();
  }

  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
  }

  // Standard normal via Box-Muller.
  double normal();

  // Derives an independent substream seed (splitmix64 finalizer).
  static uint64_t mix(uint64_t seed, uint64_t stream);

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dh
