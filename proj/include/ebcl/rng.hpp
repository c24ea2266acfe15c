#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

#include "ebcl/matrix.hpp"

namespace ebcl {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives independent named streams from one master seed, so adding draws
/// to one stream never shifts another.
class SeedSequence {
 public:
  explicit SeedSequence(std::uint64_t master) : master_(master) {}

  std::uint64_t master() const noexcept { return master_; }

  std::uint64_t derive(std::string_view name, std::uint64_t index = 0) const noexcept {
    return splitmix64(splitmix64(master_ ^ fnv1a(name)) + index);
  }

 private:
  std::uint64_t master_;
};

/// Mersenne twister plus the standard normal sampler.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  double normal() { return normal_(engine_); }

  DenseMatrix normal_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0) {
    DenseMatrix m(rows, cols);
    for (double& v : m.data()) v = stddev * normal();
    return m;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace ebcl
