#include "cade/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "cade/error.hpp"

namespace cade {

void Parameter::assign(const Tensor2& v) {
  if (!v.same_shape(value_)) {
    throw DimensionError("Parameter " + id_ + ": cannot assign " + v.shape_string() +
                         " to " + value_.shape_string());
  }
  value_ = v;
}

void ParamSet::add(const ParamPtr& p) {
  auto it = index_.find(p->id());
  if (it != index_.end()) {
    if (params_[it->second] == p) return;
    throw ConfigError("ParamSet: duplicate parameter id " + p->id());
  }
  index_.emplace(p->id(), params_.size());
  params_.push_back(p);
}

void ParamSet::add_all(const ParamSet& other) {
  for (const auto& p : other) add(p);
}

const ParamPtr& ParamSet::get(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ConfigError("ParamSet: unknown parameter id " + id);
  return params_[it->second];
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value().size();
  return n;
}

const Tensor2& Var::value() const { return tape_->value_of(index_); }
const Tensor2& Var::grad() const { return tape_->grad_of(index_); }

Var Tape::constant(Tensor2 value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const ParamPtr& p) {
  nodes_.push_back(Node{p->value(), {}, {}, p->id()});
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor2 value, std::function<void(const Tensor2&)> backward) {
  nodes_.push_back(Node{std::move(value), {}, std::move(backward), {}});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw Error("Tape::backward: loss belongs to another tape");
  const Tensor2& lv = nodes_[loss.index()].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw DimensionError("Tape::backward: loss must be scalar, got " + lv.shape_string());
  }
  if (!std::isfinite(lv[0])) throw NumericError("Tape::backward: non-finite loss");
  for (auto& n : nodes_) n.grad = Tensor2(n.value.rows(), n.value.cols(), 0.0);
  nodes_[loss.index()].grad[0] = 1.0;
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.backward) n.backward(n.grad);
  }
}

GradSet Tape::gradients(const ParamSet& params) const {
  GradSet out;
  for (const auto& p : params) {
    out.emplace(p->id(), Tensor2(p->value().rows(), p->value().cols(), 0.0));
  }
  for (const auto& n : nodes_) {
    if (n.param_id.empty() || n.grad.empty()) continue;
    auto it = out.find(n.param_id);
    if (it == out.end()) continue;
    auto dst = it->second.data();
    auto src = n.grad.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
  return out;
}

namespace {

void check_same_tape(Var a, Var b, const char* op) {
  if (a.tape() != b.tape() || a.tape() == nullptr) {
    throw Error(std::string(op) + ": operands on different tapes");
  }
}

void check_same_shape(const Tensor2& a, const Tensor2& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

template <typename Fwd, typename Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
  Tape* t = x.tape();
  const Tensor2& xv = x.value();
  Tensor2 out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  std::size_t xi = x.index();
  std::size_t oi = t->size();
  return t->push(std::move(out), [t, xi, oi, deriv](const Tensor2& g) {
    const Tensor2& xval = t->value_of(xi);
    const Tensor2& yval = t->value_of(oi);
    Tensor2& gx = t->grad_of(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xval[i], yval[i]);
  });
}

}  // namespace

namespace dense {

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.shape_string() + " x " + b.shape_string());
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor2 out(n, m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* brow = b.row_span(p).data();
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

}  // namespace dense

Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  Tape* t = a.tape();
  Tensor2 out = dense::matmul(a.value(), b.value());
  std::size_t ai = a.index(), bi = b.index();
  return t->push(std::move(out), [t, ai, bi](const Tensor2& g) {
    const Tensor2& av = t->value_of(ai);
    const Tensor2& bv = t->value_of(bi);
    const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
    Tensor2& ga = t->grad_of(ai);
    Tensor2& gb = t->grad_of(bi);
    // ga += g * b^T ; gb += a^T * g
    for (std::size_t i = 0; i < n; ++i) {
      const double* grow = g.row_span(i).data();
      for (std::size_t p = 0; p < k; ++p) {
        const double* brow = bv.row_span(p).data();
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
        ga(i, p) += acc;
        const double aval = av(i, p);
        if (aval == 0.0) continue;
        double* gbrow = &gb(p, 0);
        for (std::size_t j = 0; j < m; ++j) gbrow[j] += aval * grow[j];
      }
    }
  });
}

Var add_bias(Var x, Var bias) {
  check_same_tape(x, bias, "add_bias");
  const Tensor2& xv = x.value();
  const Tensor2& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw DimensionError("add_bias: bias " + bv.shape_string() + " for input " +
                         xv.shape_string());
  }
  Tensor2 out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  Tape* t = x.tape();
  std::size_t xi = x.index(), bi = bias.index();
  return t->push(std::move(out), [t, xi, bi](const Tensor2& g) {
    Tensor2& gx = t->grad_of(xi);
    Tensor2& gb = t->grad_of(bi);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) {
        gx(r, c) += g(r, c);
        gb[c] += g(r, c);
      }
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b, "add");
  check_same_shape(a.value(), b.value(), "add");
  Tensor2 out = a.value();
  const Tensor2& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Tape* t = a.tape();
  std::size_t ai = a.index(), bi = b.index();
  return t->push(std::move(out), [t, ai, bi](const Tensor2& g) {
    Tensor2& ga = t->grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    Tensor2& gb = t->grad_of(bi);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b, "sub");
  check_same_shape(a.value(), b.value(), "sub");
  Tensor2 out = a.value();
  const Tensor2& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Tape* t = a.tape();
  std::size_t ai = a.index(), bi = b.index();
  return t->push(std::move(out), [t, ai, bi](const Tensor2& g) {
    Tensor2& ga = t->grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    Tensor2& gb = t->grad_of(bi);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b, "mul");
  check_same_shape(a.value(), b.value(), "mul");
  Tensor2 out = a.value();
  const Tensor2& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tape* t = a.tape();
  std::size_t ai = a.index(), bi = b.index();
  return t->push(std::move(out), [t, ai, bi](const Tensor2& g) {
    const Tensor2& av = t->value_of(ai);
    const Tensor2& bval = t->value_of(bi);
    Tensor2& ga = t->grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bval[i];
    Tensor2& gb = t->grad_of(bi);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

Var scale(Var x, double c) {
  return unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_scalar(Var x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

namespace {
double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  const Tensor2& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > 0.0)) throw NumericError("log: non-positive argument");
  }
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var square(Var x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var clamp(Var x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0; });
}

Var sum(Var x) {
  const Tensor2& xv = x.value();
  double s = 0.0;
  for (double v : xv.data()) s += v;
  Tape* t = x.tape();
  std::size_t xi = x.index();
  return t->push(Tensor2::scalar(s), [t, xi](const Tensor2& g) {
    Tensor2& gx = t->grad_of(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var max_all(Var x) {
  const Tensor2& xv = x.value();
  if (xv.empty()) throw DimensionError("max_all: empty tensor");
  std::size_t arg = 0;
  for (std::size_t i = 1; i < xv.size(); ++i)
    if (xv[i] > xv[arg]) arg = i;
  Tape* t = x.tape();
  std::size_t xi = x.index();
  return t->push(Tensor2::scalar(xv[arg]),
                 [t, xi, arg](const Tensor2& g) { t->grad_of(xi)[arg] += g[0]; });
}

Var mean_rows(Var x) {
  const Tensor2& xv = x.value();
  if (xv.rows() == 0) throw DimensionError("mean_rows: no rows");
  const double inv = 1.0 / static_cast<double>(xv.rows());
  Tensor2 out(1, xv.cols(), 0.0);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out[c] += xv(r, c) * inv;
  Tape* t = x.tape();
  std::size_t xi = x.index();
  return t->push(std::move(out), [t, xi, inv](const Tensor2& g) {
    Tensor2& gx = t->grad_of(xi);
    for (std::size_t r = 0; r < gx.rows(); ++r)
      for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += g[c] * inv;
  });
}

Var row_norms(Var x) {
  const Tensor2& xv = x.value();
  Tensor2 out(xv.rows(), 1, 0.0);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (double v : xv.row_span(r)) s += v * v;
    out[r] = std::sqrt(s);
  }
  Tape* t = x.tape();
  std::size_t xi = x.index();
  std::size_t oi = t->size();
  return t->push(std::move(out), [t, xi, oi](const Tensor2& g) {
    const Tensor2& xval = t->value_of(xi);
    const Tensor2& norms = t->value_of(oi);
    Tensor2& gx = t->grad_of(xi);
    for (std::size_t r = 0; r < xval.rows(); ++r) {
      if (norms[r] == 0.0) continue;
      const double f = g[r] / norms[r];
      for (std::size_t c = 0; c < xval.cols(); ++c) gx(r, c) += f * xval(r, c);
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  Tape* t = parts.front().tape();
  std::vector<Tensor2> values;
  std::vector<std::size_t> idx;
  for (const auto& p : parts) {
    check_same_tape(parts.front(), p, "concat_rows");
    values.push_back(p.value());
    idx.push_back(p.index());
  }
  Tensor2 out = vstack(values);
  return t->push(std::move(out), [t, idx](const Tensor2& g) {
    std::size_t offset = 0;
    for (std::size_t i : idx) {
      Tensor2& gp = t->grad_of(i);
      for (std::size_t k = 0; k < gp.size(); ++k) gp[k] += g[offset + k];
      offset += gp.size();
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  Tape* t = parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> idx;
  for (const auto& p : parts) {
    check_same_tape(parts.front(), p, "concat_cols");
    if (p.rows() != rows) throw DimensionError("concat_cols: row mismatch");
    cols += p.cols();
    idx.push_back(p.index());
  }
  Tensor2 out(rows, cols);
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const Tensor2& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, c0 + c) = pv(r, c);
    c0 += pv.cols();
  }
  return t->push(std::move(out), [t, idx](const Tensor2& g) {
    std::size_t c0 = 0;
    for (std::size_t i : idx) {
      Tensor2& gp = t->grad_of(i);
      for (std::size_t r = 0; r < gp.rows(); ++r)
        for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += g(r, c0 + c);
      c0 += gp.cols();
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor2& xv = x.value();
  if (begin + count > xv.cols()) throw DimensionError("slice_cols: out of range");
  Tensor2 out(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = xv(r, begin + c);
  Tape* t = x.tape();
  std::size_t xi = x.index();
  return t->push(std::move(out), [t, xi, begin](const Tensor2& g) {
    Tensor2& gx = t->grad_of(xi);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gx(r, begin + c) += g(r, c);
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Tensor2& xv = x.value();
  if (begin + count > xv.rows()) throw DimensionError("slice_rows: out of range");
  const std::size_t cols = xv.cols();
  std::vector<double> data(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                           xv.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * cols));
  Tape* t = x.tape();
  std::size_t xi = x.index();
  return t->push(Tensor2(count, cols, std::move(data)), [t, xi, begin, cols](const Tensor2& g) {
    Tensor2& gx = t->grad_of(xi);
    for (std::size_t k = 0; k < g.size(); ++k) gx[begin * cols + k] += g[k];
  });
}

}  // namespace cade
