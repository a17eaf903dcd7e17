#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string_view>

#include "mixrag/tensor.hpp"

namespace mixrag {

// Seeded random source. The engine sequence is fixed by the standard and every
// distribution below is computed by hand, so equal seeds give identical
// streams on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Standard normal (Box-Muller).
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Child generator for a named sub-stream, independent of draws made so far.
  Rng fork(std::string_view label) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix_seed(std::uint64_t seed, std::string_view label);

inline constexpr double kGumbelClamp = 1e-12;

// -log(-log(u)) with u clamped to [1e-12, 1 - 1e-12].
double gumbel_from_uniform(double u);

Tensor gumbel_sample(Rng& rng, std::size_t n);
// Same transform over an arbitrary uniform stream (used to force draws).
Tensor gumbel_sample(const std::function<double()>& uniform, std::size_t n);

// Gaussian tensor with the given standard deviation.
Tensor normal_tensor(Rng& rng, Shape shape, double stddev, bool requires_grad = false);

}  // namespace mixrag
