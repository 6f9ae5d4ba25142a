#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "cade/tensor.hpp"

namespace cade {

// Seeded random source whose complete state (engine plus the normal
// distribution's cached value) round-trips through a string, so checkpoints
// can resume a run bit for bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  Tensor2 normal_tensor(std::size_t rows, std::size_t cols);
  std::uint64_t next_u64() { return engine_(); }

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

  bool operator==(const Rng& other) const;

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace cade
