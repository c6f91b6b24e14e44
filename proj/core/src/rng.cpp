#include "avsr/rng.hpp"

#include <cmath>
#include <numbers>

#include "avsr/error.hpp"

namespace avsr {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() {
  const std::uint64_t key = mix64(seed_ ^ 0x6A09E667F3BCC909ULL);
  return mix64(key + (++counter_) * kGolden);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw NumericError("Rng::below: n must be positive");
  const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::uint64_t>(wide >> 64);
}

std::uint64_t Rng::derive_seed(std::uint64_t seed, std::string_view name) {
  // FNV-1a over the name, folded into the seed.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return mix64(mix64(seed) ^ h);
}

std::uint64_t Rng::derive_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(mix64(seed + kGolden) ^ mix64(index * 0xD1B54A32D192ED03ULL + 1));
}

Rng Rng::substream(std::string_view name) const { return Rng(derive_seed(seed_, name)); }

Rng Rng::substream(std::uint64_t index) const { return Rng(derive_seed(seed_, index)); }

}  // namespace avsr
