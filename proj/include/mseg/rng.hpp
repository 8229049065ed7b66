#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

#include "mseg/tensor.hpp"

namespace mseg {

/// SplitMix64 (Steele, Lea, Flood 2014). Every random draw in the project goes
/// through this generator so a seed fully determines weights and data.
/// Satisfies UniformRandomBitGenerator.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : (*this)() % n; }

  /// Derives an independent stream, e.g. one per named parameter.
  SplitMix64 fork(std::uint64_t salt) { return SplitMix64((*this)() ^ (salt * 0xD6E8FEB86659FD93ULL)); }

 private:
  std::uint64_t state_;
};

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double lo, double hi, SplitMix64& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::int64_t fan_in, SplitMix64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform_tensor<T>(std::move(shape), -bound, bound, rng);
}

}  // namespace mseg
