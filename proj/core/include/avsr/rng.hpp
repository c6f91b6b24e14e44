#pragma once

#include <cstdint>
#include <string_view>

namespace avsr {

/// Counter-based random stream.
///
/// Draw `i` is a pure function of (seed, i), so identical (seed, counter)
/// pairs reproduce identical sequences on every platform. Distribution
/// sampling is implemented here rather than through <random> distributions,
/// whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  /// One raw 64-bit draw.
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution. One draw.
  double uniform();
  /// Standard normal via Box-Muller. Two draws.
  double normal();
  /// Integer in [0, n). One draw. n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Independent stream keyed by a name, e.g. "data", "train", "noise".
  Rng substream(std::string_view name) const;
  /// Independent stream keyed by an index.
  Rng substream(std::uint64_t index) const;

  static std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace avsr
