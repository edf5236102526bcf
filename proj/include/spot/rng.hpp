#pragma once

#include <cstdint>

namespace spot {

std::uint64_t splitmix64(std::uint64_t x);

/// Combines a base seed with a stream index (e.g. image index, epoch).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// Counter-based generator: draw i is a pure function of (key, i), so
/// streams keyed by different seeds never interact and parallel callers
/// are order-independent. Distributions are implemented here rather than
/// via <random> so sequences are identical across standard libraries.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(splitmix64(key ^ 0x5851f42d4c957f2dULL)) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in [0, 1) on a 2^-32 lattice.
  double uniform32();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Gumbel(0,1) variate.
  double gumbel();

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace spot
