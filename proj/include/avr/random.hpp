#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <utility>
#include <vector>

namespace avr {

/// 64-bit FNV-1a over the bytes of `text`.
constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const char ch : text) {
    hash ^= static_cast<std::uint8_t>(ch);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

/// splitmix64 finalizer, usable as a stateless mixing function.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a base seed and a list of keys
/// (fold index, epoch, a hashed purpose tag, ...). Order of keys matters.
constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                    std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t acc = mix64(seed ^ 0x9e3779b97f4a7c15ULL);
  for (const std::uint64_t key : keys) {
    acc = mix64(acc ^ mix64(key + 0x9e3779b97f4a7c15ULL));
  }
  return acc;
}

/// The project-wide deterministic generator. Every stochastic decision
/// (shuffles, initialization, dropout masks, synthetic data) draws from it
/// so results do not depend on the standard library's distributions.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform double in [0, 1) with 53 bits of resolution.
  double uniform01() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform01(); }

  /// Unbiased integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept;

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() noexcept;

 private:
  std::uint64_t state_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// Fisher-Yates shuffle driven by `rng`: for i = n-1 down to 1, swap
/// items[i] with items[rng.below(i + 1)].
template <class T>
void shuffle(std::vector<T>& items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace avr
