#pragma once

#include <cstdint>
#include <limits>
#include <string_view>
#include <utility>
#include <vector>

namespace stochdet {

/// SplitMix64 output function. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

/// Derives a child key from a parent key and one coordinate.
constexpr std::uint64_t derive(std::uint64_t parent, std::uint64_t coordinate) {
  return mix64(parent ^ mix64(coordinate * kGolden + 0x632be59bd9b4e019ull));
}

template <class... Coords>
constexpr std::uint64_t derive(std::uint64_t parent, std::uint64_t first, Coords... rest) {
  return derive(derive(parent, first), static_cast<std::uint64_t>(rest)...);
}

/// FNV-1a, for naming sub-streams ("train", "attack", ...).
constexpr std::uint64_t name_key(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Counter-based stream: draw i is mix64(key + (i + 1) * golden), a pure
/// function of (key, i). Streams with different keys are independent.
class CounterStream {
 public:
  using result_type = std::uint64_t;

  explicit constexpr CounterStream(std::uint64_t key) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  constexpr result_type at(std::uint64_t index) const { return mix64(key_ + (index + 1) * kGolden); }
  constexpr result_type operator()() { return at(counter_++); }

  /// Uniform on [0,1) with 53 random bits.
  constexpr double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  constexpr double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n); n > 0. Lemire rejection keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    for (;;) {
      const __uint128_t m = static_cast<__uint128_t>((*this)()) * n;
      const auto low = static_cast<std::uint64_t>(m);
      if (low >= n || low >= (0 - n) % n) return static_cast<std::uint64_t>(m >> 64);
    }
  }

  constexpr std::uint64_t key() const { return key_; }
  constexpr std::uint64_t position() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Fisher-Yates with a CounterStream; unlike std::shuffle the result does not
/// depend on the standard library implementation.
template <class T>
void shuffle(std::vector<T>& items, CounterStream& rng) {
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng.below(i)]);
}

}  // namespace stochdet
