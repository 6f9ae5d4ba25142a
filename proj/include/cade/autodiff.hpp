#pragma once

// Minimal reverse-mode differentiation over Tensor2 values.
//
// A Tape records every operation of one forward pass. Parameters enter the
// tape as leaves tied to their stable identifier; after backward() the
// gradient of every parameter is collected by identifier, so a parameter
// that enters a graph more than once (tied weights) receives the sum of all
// contributions.

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cade/tensor.hpp"

namespace cade {

// A named trainable tensor. The shape is fixed at construction.
class Parameter {
 public:
  Parameter(std::string id, Tensor2 value) : id_(std::move(id)), value_(std::move(value)) {}

  const std::string& id() const { return id_; }
  const Tensor2& value() const { return value_; }
  Tensor2& mutable_value() { return value_; }
  // Replaces the value; throws DimensionError when the shape differs.
  void assign(const Tensor2& v);

 private:
  std::string id_;
  Tensor2 value_;
};

using ParamPtr = std::shared_ptr<Parameter>;

// Ordered collection of parameters with unique identifiers. Entries are shared
// pointers so two models may hold the identical Parameter object.
class ParamSet {
 public:
  // Adds `p`; adding the same object twice is a no-op, a different object with
  // an existing identifier throws ConfigError.
  void add(const ParamPtr& p);
  void add_all(const ParamSet& other);

  const ParamPtr& get(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  std::size_t size() const { return params_.size(); }
  const std::vector<ParamPtr>& entries() const { return params_; }
  std::size_t scalar_count() const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<ParamPtr> params_;
  std::map<std::string, std::size_t> index_;
};

// Gradient per parameter identifier.
using GradSet = std::map<std::string, Tensor2>;

class Tape;

// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  const Tensor2& value() const;
  const Tensor2& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor2 value);
  Var param(const ParamPtr& p);

  // Appends an interior node. `backward` receives the node's output gradient
  // and must accumulate into the parents' gradients via grad_of().
  Var push(Tensor2 value, std::function<void(const Tensor2& out_grad)> backward);

  // Runs reverse accumulation from a 1x1 node. Throws NumericError when the
  // loss is not finite.
  void backward(Var loss);

  // d(loss)/dp for every entry of `params`; parameters that never entered the
  // tape get zeros.
  GradSet gradients(const ParamSet& params) const;

  const Tensor2& value_of(std::size_t i) const { return nodes_[i].value; }
  const Tensor2& grad_of(std::size_t i) const { return nodes_[i].grad; }
  Tensor2& grad_of(std::size_t i) { return nodes_[i].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor2 value;
    Tensor2 grad;
    std::function<void(const Tensor2&)> backward;
    std::string param_id;  // empty for non-leaf / constant nodes
  };
  std::deque<Node> nodes_;  // deque keeps node references stable on push
};

// --- Operations -----------------------------------------------------------
// All binary ops require both operands on the same tape.

Var matmul(Var a, Var b);
// x (n x m) + bias (1 x m) broadcast over rows.
Var add_bias(Var x, Var bias);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
// Elementwise clamp; gradient is zero where clamping engaged.
Var clamp(Var x, double lo, double hi);
Var sum(Var x);   // -> 1x1
Var mean(Var x);  // -> 1x1
// Maximum entry; the gradient flows to the first maximal element.
Var max_all(Var x);
// Column-wise mean over rows (n x m -> 1 x m).
Var mean_rows(Var x);
// Euclidean norm of each row (n x m -> n x 1). Zero rows get zero gradient.
Var row_norms(Var x);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var slice_rows(Var x, std::size_t begin, std::size_t count);

// Plain tensor equivalents used on frozen models.
namespace dense {
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
}  // namespace dense

}  // namespace cade
