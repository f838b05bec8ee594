#pragma once

#include <cstdint>
#include <random>

namespace geodrift {

/// Mixes a master seed with up to two salt values into a new 64-bit seed.
/// Used to derive independent, replayable streams for sub-computations
/// (one per trajectory, per bridge, per EM iteration, ...).
uint64_t derive_seed(uint64_t master, uint64_t salt_a = 0, uint64_t salt_b = 0);

/// Seeded generator with explicit normal sampling.
///
/// mt19937_64 is fully specified by the standard, and the Box-Muller
/// transform below avoids std::normal_distribution, whose output sequence
/// is implementation-defined. Two builds with the same seed therefore
/// produce identical draws.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Standard normal draw (Box-Muller, second value cached).
  double gauss();

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n);

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace geodrift
