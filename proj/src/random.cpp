#include "pcdm/random.hpp"

#include <array>

namespace pcdm {

namespace {

std::mt19937_64 seeded_engine(uint64_t seed, uint64_t stream) {
  std::array<uint32_t, 4> words{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                                static_cast<uint32_t>(stream), static_cast<uint32_t>(stream >> 32)};
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace

Rng::Rng(uint64_t seed, uint64_t stream) : engine_(seeded_engine(seed, stream)) {}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  std::uniform_int_distribution<int64_t> dist(lo, hi);
  return dist(engine_);
}

Tensor Rng::normal_tensor(const Shape& shape) {
  Tensor out(shape);
  for (double& v : out.data()) v = normal();
  return out;
}

Tensor seeded_gaussian(const Shape& shape, uint64_t seed) {
  Rng rng(seed);
  return rng.normal_tensor(shape);
}

}  // namespace pcdm
