#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "ibm/tensor.hpp"

namespace ibm {

/// Explicit-state generator. Every random draw in the library goes through
/// one of these; there is no global randomness. Not thread-safe: one owner.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Child generator with an independent stream; advances this one by one draw.
  SeededRng split() { return SeededRng(engine_() ^ 0x9E3779B97F4A7C15ULL); }

  double normal() { return normal_(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// rows × cols matrix of i.i.d. N(mean, stddev²) draws, row-major order.
inline Matrix gaussian_sample(SeededRng& rng, std::size_t rows, std::size_t cols, double mean,
                              double stddev) {
  if (!(stddev >= 0.0))
    throw Error("gaussian_sample: stddev must be >= 0, got " + std::to_string(stddev));
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = mean + stddev * rng.normal();
  return m;
}

}  // namespace ibm
