#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dkcnet {

/// Seeded generator. The engine is std::mt19937_64, whose output sequence is
/// fixed by the standard; the conversions to floating point below are done by
/// hand because the std distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  /// Standard normal draw (Box-Muller, one value per call).
  double normal();

  /// Independent child generator for a named sub-stream.
  Rng fork(std::uint64_t stream) const { return Rng(mix(seed_, stream)); }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b);
  static std::uint64_t hash(std::string_view key);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace dkcnet
