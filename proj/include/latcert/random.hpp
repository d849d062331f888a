#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace latcert {

/// SplitMix64 finaliser: a bijective 64-bit mixing function.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Component-tagged sub-seed: mix64(seed ^ fnv1a(tag)).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept;

/// Indexed sub-seed for per-item streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept;

/// Maps 64 random bits to a double strictly inside (0, 1).
constexpr double bits_to_open_unit(std::uint64_t bits) noexcept {
  // 52 bits keep k + 0.5 exactly representable, so the result never rounds to 1.
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

/// Sequential random stream. The engine is std::mt19937_64, whose output is
/// fixed by the standard; the transforms below are written out so results do
/// not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in (0, 1).
  double uniform() { return bits_to_open_unit(engine_()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n), unbiased.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard normal by inverse-CDF transform.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace latcert
