#pragma once

#include <cstdint>
#include <random>

#include "pcdm/tensor.hpp"

namespace pcdm {

/// Seeded random stream. Identical seeds give bit-identical draws.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  /// Independent stream keyed by (seed, stream) for per-chain / per-check use.
  Rng(uint64_t seed, uint64_t stream);

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Uniform integer in [lo, hi].
  int64_t uniform_int(int64_t lo, int64_t hi);
  uint64_t next_u64() { return engine_(); }

  Tensor normal_tensor(const Shape& shape);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// i.i.d. standard-normal tensor from a fresh stream seeded with `seed`.
Tensor seeded_gaussian(const Shape& shape, uint64_t seed);

}  // namespace pcdm
