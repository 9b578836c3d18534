#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "growbrain/matrix.hpp"

namespace growbrain {

/// xoshiro256** seeded through splitmix64. The stream for a given seed is
/// fixed across platforms; normals use the cosine branch of Box-Muller and
/// consume two raw outputs each.
///
/// Stream version 1. Any change to the algorithm, seeding or the way normals
/// and indices are derived must bump kStreamVersion.
class Rng {
 public:
  static constexpr int kStreamVersion = 1;

  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64() noexcept;

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;

  /// Standard normal draw.
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  /// Uniform integer in [0, bound), bound > 0. Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t bound) noexcept;

  /// Independent child stream; advances this generator by one output.
  Rng fork() noexcept { return Rng(next_u64()); }

 private:
  std::array<std::uint64_t, 4> state_{};
};

/// rows x cols i.i.d. normal draws in row-major order.
Matrix gaussian_fill(Rng& rng, std::size_t rows, std::size_t cols, double mean, double stddev);

/// Seeded Fisher-Yates shuffle.
template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace growbrain
