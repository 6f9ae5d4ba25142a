#pragma once

// Oracles shared by unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "cade/autodiff.hpp"

namespace cade::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param id>[<index>]"
  std::size_t checked = 0;
};

// Gradients below this magnitude are compared on an absolute scale.
inline constexpr double kGradFloor = 1e-6;

// Central differences with step h on every scalar of `params`, compared with
// the tape's gradient. `loss` must be a pure function of the parameter values.
inline GradCheckResult check_gradients(const ParamSet& params,
                                       const std::function<Var(Tape&)>& loss, double h = 1e-5) {
  GradSet analytic;
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
    analytic = tape.gradients(params);
  }
  auto eval = [&] {
    Tape tape;
    return loss(tape).value().item();
  };
  GradCheckResult res;
  for (const auto& p : params) {
    Tensor2& v = p->mutable_value();
    const Tensor2& g = analytic.at(p->id());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double up = eval();
      v[i] = orig - h;
      const double down = eval();
      v[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(numeric), std::abs(g[i]), kGradFloor});
      const double rel = std::abs(numeric - g[i]) / denom;
      ++res.checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = p->id() + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

// O(n^2) Mann-Whitney oracle: fraction of (pos, neg) pairs ordered correctly,
// ties counted one half.
inline double pair_count_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / pairs;
}

inline ParamPtr random_param(const std::string& id, std::size_t rows, std::size_t cols,
                             std::mt19937_64& eng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor2 t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = n(eng);
  return std::make_shared<Parameter>(id, std::move(t));
}

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cade_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace cade::testing
