#include "cade/adam.hpp"

#include <cmath>

#include "cade/error.hpp"

namespace cade {

AdamState::AdamState(AdamOptions opts) : options(opts) {
  if (!(opts.beta1 >= 0.0 && opts.beta1 < 1.0 && opts.beta2 >= 0.0 && opts.beta2 < 1.0)) {
    throw ConfigError("AdamState: betas must lie in [0, 1)");
  }
  if (!(opts.lr > 0.0)) throw ConfigError("AdamState: learning rate must be positive");
}

AdamState::AdamState(const ParamSet& params, AdamOptions opts) : AdamState(opts) {
  for (const auto& p : params) {
    first_moment.emplace(p->id(), Tensor2(p->value().rows(), p->value().cols(), 0.0));
    second_moment.emplace(p->id(), Tensor2(p->value().rows(), p->value().cols(), 0.0));
  }
}

void adam_step(const ParamSet& params, const GradSet& grads, AdamState& state) {
  for (const auto& p : params) {
    auto g = grads.find(p->id());
    if (g == grads.end()) continue;
    if (!g->second.same_shape(p->value())) {
      throw DimensionError("adam_step: gradient " + g->second.shape_string() +
                           " for parameter " + p->id() + " " + p->value().shape_string());
    }
    require_finite(g->second, "adam_step");
  }

  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);

  for (const auto& p : params) {
    auto g = grads.find(p->id());
    if (g == grads.end()) continue;
    const Tensor2& grad = g->second;
    Tensor2& w = p->mutable_value();
    auto [m_it, m_new] = state.first_moment.try_emplace(p->id(), w.rows(), w.cols(), 0.0);
    auto [v_it, v_new] = state.second_moment.try_emplace(p->id(), w.rows(), w.cols(), 0.0);
    Tensor2& m = m_it->second;
    Tensor2& v = v_it->second;
    if (!m.same_shape(w) || !v.same_shape(w)) {
      throw DimensionError("adam_step: moment shape mismatch for " + p->id());
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * grad[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

}  // namespace cade
