#include "cade/layers.hpp"

#include <cmath>

#include "cade/error.hpp"

namespace cade {

namespace {

Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kTanh: return tanh(x);
    case Activation::kNone: break;
  }
  return x;
}

void check_affine_shapes(const Tensor2& x, const Tensor2& w, const Tensor2& b) {
  if (x.cols() != w.rows()) {
    throw DimensionError("affine_forward: input " + x.shape_string() + " vs weight " +
                         w.shape_string());
  }
  if (b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("affine_forward: bias " + b.shape_string() + " vs weight " +
                         w.shape_string());
  }
}

}  // namespace

Var affine_forward(Var x, Var weight, Var bias, Activation act) {
  check_affine_shapes(x.value(), weight.value(), bias.value());
  require_finite(x.value(), "affine_forward");
  return activate(add_bias(matmul(x, weight), bias), act);
}

Tensor2 apply_activation(Tensor2 x, Activation act) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    double& v = x[i];
    switch (act) {
      case Activation::kRelu: v = v > 0.0 ? v : 0.0; break;
      case Activation::kSigmoid:
        v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        break;
      case Activation::kTanh: v = std::tanh(v); break;
      case Activation::kNone: break;
    }
  }
  return x;
}

Tensor2 affine_forward(const Tensor2& x, const Tensor2& weight, const Tensor2& bias,
                       Activation act) {
  check_affine_shapes(x, weight, bias);
  require_finite(x, "affine_forward");
  Tensor2 y = dense::matmul(x, weight);
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += bias[c];
  return apply_activation(std::move(y), act);
}

Dense::Dense(const std::string& name, std::size_t in, std::size_t out, Activation act, Rng& rng)
    : act_(act) {
  // He-style scaling for relu layers, Glorot otherwise.
  const double stddev = act == Activation::kRelu ? std::sqrt(2.0 / static_cast<double>(in))
                                                 : std::sqrt(2.0 / static_cast<double>(in + out));
  Tensor2 w(in, out);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = stddev * rng.normal();
  weight_ = std::make_shared<Parameter>(name + ".weight", std::move(w));
  bias_ = std::make_shared<Parameter>(name + ".bias", Tensor2(1, out, 0.0));
}

Dense::Dense(ParamPtr weight, ParamPtr bias, Activation act)
    : weight_(std::move(weight)), bias_(std::move(bias)), act_(act) {}

Var Dense::forward(Tape& tape, Var x) const {
  return affine_forward(x, tape.param(weight_), tape.param(bias_), act_);
}

Tensor2 Dense::forward(const Tensor2& x) const {
  return affine_forward(x, weight_->value(), bias_->value(), act_);
}

void Dense::register_params(ParamSet& set) const {
  set.add(weight_);
  set.add(bias_);
}

Dense Dense::clone() const {
  return Dense(std::make_shared<Parameter>(*weight_), std::make_shared<Parameter>(*bias_), act_);
}

}  // namespace cade
