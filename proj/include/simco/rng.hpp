#pragma once

#include <cstdint>
#include <random>

namespace simco {

std::uint64_t splitmix64(std::uint64_t x);

/// Seed for the independent substream of item `index` under `seed`.
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index);

/// Deterministic random source. Only the raw mt19937_64 output is used;
/// all conversions are implemented here so results do not depend on the
/// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Poisson variate (Knuth's multiplication method, chunked for large means).
  std::int64_t poisson(double mean);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace simco
