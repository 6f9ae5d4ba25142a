#include "cade/rng.hpp"

#include <sstream>

#include "cade/error.hpp"

namespace cade {

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw ConfigError("Rng::index: empty range");
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

Tensor2 Rng::normal_tensor(std::size_t rows, std::size_t cols) {
  Tensor2 out(rows, cols);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = normal();
  return out;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << '\n' << normal_ << '\n' << uniform_;
  return os.str();
}

Rng Rng::deserialize(const std::string& state) {
  Rng r;
  std::istringstream is(state);
  is >> r.engine_ >> r.normal_ >> r.uniform_;
  if (!is) throw FormatError("Rng::deserialize: malformed generator state");
  return r;
}

bool Rng::operator==(const Rng& other) const {
  return engine_ == other.engine_ && normal_ == other.normal_ && uniform_ == other.uniform_;
}

}  // namespace cade
