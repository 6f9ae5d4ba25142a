#pragma once

#include <string>

#include "cade/autodiff.hpp"
#include "cade/rng.hpp"

namespace cade {

enum class Activation { kNone, kRelu, kSigmoid, kTanh };

// y = act(x W + b) on the tape. Rejects shape mismatches (DimensionError) and
// non-finite inputs (NumericError).
Var affine_forward(Var x, Var weight, Var bias, Activation act);
// Same computation without gradient bookkeeping.
Tensor2 affine_forward(const Tensor2& x, const Tensor2& weight, const Tensor2& bias,
                       Activation act);

Tensor2 apply_activation(Tensor2 x, Activation act);

// Fully connected layer whose weight and bias live in a ParamSet under
// "<name>.weight" and "<name>.bias".
class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, std::size_t in, std::size_t out, Activation act, Rng& rng);
  Dense(ParamPtr weight, ParamPtr bias, Activation act);

  Var forward(Tape& tape, Var x) const;
  Tensor2 forward(const Tensor2& x) const;

  std::size_t in() const { return weight_->value().rows(); }
  std::size_t out() const { return weight_->value().cols(); }
  Activation activation() const { return act_; }
  const ParamPtr& weight() const { return weight_; }
  const ParamPtr& bias() const { return bias_; }
  void register_params(ParamSet& set) const;

  // Independent copy with fresh Parameter objects holding the same values.
  Dense clone() const;

 private:
  ParamPtr weight_;
  ParamPtr bias_;
  Activation act_ = Activation::kNone;
};

}  // namespace cade
