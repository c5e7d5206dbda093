#pragma once

// Counter-based random numbers built on the splitmix64 finalizer.
//
// Every draw is a pure function of (key, counter), so a stream can be
// consumed in any order and substreams never share state. Normals use
// Box-Muller on two consecutive counters; only the cosine branch is kept so
// that normal k always maps to counters (2k, 2k+1).

#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace puma {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += kGoldenGamma;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Seed of substream `stream` under `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return splitmix64(seed ^ splitmix64(stream * kGoldenGamma + 0x2545F4914F6CDD1DULL));
}

// Hash of a seed plus a sequence of doubles (bit patterns, so -0.0 != 0.0).
inline std::uint64_t hash_values(std::uint64_t seed, std::span<const double> values) noexcept {
  std::uint64_t h = splitmix64(seed);
  for (double v : values) h = splitmix64(h ^ std::bit_cast<std::uint64_t>(v));
  return h;
}

// Uniform in (0, 1]; never returns 0 so log() is safe.
constexpr double to_unit_open_closed(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

inline double normal_from_bits(std::uint64_t b1, std::uint64_t b2) noexcept {
  const double u1 = to_unit_open_closed(b1);
  const double u2 = to_unit_open_closed(b2);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

class CounterRng {
public:
  explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t at(std::uint64_t index) const noexcept {
    return splitmix64(key_ + index * kGoldenGamma);
  }

  std::uint64_t next_u64() noexcept { return at(counter_++); }

  double uniform() noexcept { return to_unit_open_closed(next_u64()); }

  // Unbiased-enough integer in [0, bound) via 128-bit multiply-high.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const unsigned __int128 prod =
        static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(bound);
    return static_cast<std::uint64_t>(prod >> 64);
  }

  double normal() noexcept {
    const std::uint64_t b1 = next_u64();
    const std::uint64_t b2 = next_u64();
    return normal_from_bits(b1, b2);
  }

private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace puma
