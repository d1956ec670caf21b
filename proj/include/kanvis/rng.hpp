#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace kanvis {

/// xoshiro256** stream seeded through SplitMix64. Every draw is counted so
/// callers can assert that a code path consumed no randomness.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64() noexcept;
  /// Uniform double in [0, 1) built from the top 53 bits of one draw.
  double uniform() noexcept;
  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() noexcept;
  double normal(double mean, double sd) noexcept { return mean + sd * normal(); }
  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t draws() const noexcept { return draws_; }

 private:
  std::array<std::uint64_t, 4> state_{};
  std::uint64_t draws_ = 0;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// Stable 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

/// Seed for an independent stream identified by (run seed, owner, purpose).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view owner, std::string_view purpose) noexcept;
Rng derive_stream(std::uint64_t seed, std::string_view owner, std::string_view purpose);

}  // namespace kanvis
