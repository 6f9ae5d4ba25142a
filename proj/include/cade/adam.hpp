#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cade/autodiff.hpp"

namespace cade {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamOptions&, const AdamOptions&) = default;
};

// Moment accumulators keyed by parameter identifier.
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::map<std::string, Tensor2> first_moment;
  std::map<std::string, Tensor2> second_moment;

  explicit AdamState(AdamOptions opts = {});
  // Zero moments shaped like every entry of `params`.
  AdamState(const ParamSet& params, AdamOptions opts);

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Bias-corrected Adam update of every parameter in `params` that has an entry
// in `grads`. Missing moments are created lazily; shape mismatches throw
// DimensionError and non-finite gradients throw NumericError.
void adam_step(const ParamSet& params, const GradSet& grads, AdamState& state);

}  // namespace cade
