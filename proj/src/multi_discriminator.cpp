#include "cade/multi_discriminator.hpp"

#include <algorithm>
#include <cmath>

#include "cade/error.hpp"

namespace cade {

const char* to_string(DiscriminatorRole role) {
  switch (role) {
    case DiscriminatorRole::kAll: return "D";
    case DiscriminatorRole::kNormal: return "Dn";
    case DiscriminatorRole::kAnomaly: return "Da";
  }
  return "?";
}

Discriminator::Discriminator(DiscriminatorRole role, const DiscriminatorConfig& cfg, Rng& rng)
    : role_(role) {
  if (cfg.feature_dim == 0 || cfg.hidden1 == 0 || cfg.hidden2 == 0) {
    throw ConfigError("DiscriminatorConfig: all sizes must be >= 1");
  }
  const std::string p = std::string("disc.") + to_string(role) + ".";
  trunk1_ = Dense(p + "trunk1", cfg.feature_dim, cfg.hidden1, Activation::kRelu, rng);
  trunk2_ = Dense(p + "trunk2", cfg.hidden1, cfg.hidden2, Activation::kRelu, rng);
  score_head_ = Dense(p + "score_head", cfg.hidden2, 1, Activation::kSigmoid, rng);
  gan_head_ = Dense(p + "gan_head", cfg.hidden2, 1, Activation::kSigmoid, rng);
}

Discriminator::Discriminator(DiscriminatorRole role, Dense trunk1, Dense trunk2, Dense score_head,
                             Dense gan_head)
    : role_(role),
      trunk1_(std::move(trunk1)),
      trunk2_(std::move(trunk2)),
      score_head_(std::move(score_head)),
      gan_head_(std::move(gan_head)) {
  if (trunk1_.out() != trunk2_.in() || score_head_.in() != trunk2_.out() ||
      gan_head_.in() != trunk2_.out() || score_head_.out() != 1 || gan_head_.out() != 1) {
    throw DimensionError("Discriminator: inconsistent layer shapes");
  }
}

DiscriminatorVars Discriminator::forward(Tape& tape, Var features) const {
  if (features.cols() != feature_dim()) {
    throw DimensionError("Discriminator::forward: input " + features.value().shape_string() +
                         ", expected K=" + std::to_string(feature_dim()));
  }
  Var h = trunk2_.forward(tape, trunk1_.forward(tape, features));
  return DiscriminatorVars{score_head_.forward(tape, h), gan_head_.forward(tape, h), h};
}

DiscriminatorBatch Discriminator::forward(const Tensor2& features) const {
  if (features.cols() != feature_dim()) {
    throw DimensionError("Discriminator::forward: input " + features.shape_string() +
                         ", expected K=" + std::to_string(feature_dim()));
  }
  Tensor2 h = trunk2_.forward(trunk1_.forward(features));
  DiscriminatorBatch out;
  out.scores = score_head_.forward(h);
  out.real_probs = gan_head_.forward(h);
  out.hidden = std::move(h);
  return out;
}

DiscriminatorOutput Discriminator::forward(std::span<const double> f) const {
  DiscriminatorBatch b = forward(Tensor2::row(f));
  return DiscriminatorOutput{b.scores[0], b.real_probs[0], b.hidden.values()};
}

ParamSet Discriminator::params() const {
  ParamSet s;
  trunk1_.register_params(s);
  trunk2_.register_params(s);
  score_head_.register_params(s);
  gan_head_.register_params(s);
  return s;
}

Discriminator Discriminator::clone() const {
  return Discriminator(role_, trunk1_.clone(), trunk2_.clone(), score_head_.clone(),
                       gan_head_.clone());
}

std::vector<Discriminator> make_discriminators(std::size_t count, const DiscriminatorConfig& cfg,
                                               Rng& rng) {
  if (count != 1 && count != 3) throw ConfigError("discriminator count must be 1 or 3");
  std::vector<Discriminator> out;
  out.emplace_back(DiscriminatorRole::kAll, cfg, rng);
  if (count == 3) {
    out.emplace_back(DiscriminatorRole::kNormal, cfg, rng);
    out.emplace_back(DiscriminatorRole::kAnomaly, cfg, rng);
  }
  return out;
}

double mil_ranking_loss(std::span<const double> pos_scores, std::span<const double> neg_scores) {
  if (pos_scores.empty() || neg_scores.empty()) {
    throw DimensionError("mil_ranking_loss: empty bag");
  }
  const double max_pos = *std::max_element(pos_scores.begin(), pos_scores.end());
  const double max_neg = *std::max_element(neg_scores.begin(), neg_scores.end());
  return std::max(0.0, 1.0 - max_pos + max_neg);
}

Var mil_ranking_loss(Var pos_scores, Var neg_scores) {
  if (pos_scores.value().empty() || neg_scores.value().empty()) {
    throw DimensionError("mil_ranking_loss: empty bag");
  }
  return relu(add_scalar(sub(max_all(neg_scores), max_all(pos_scores)), 1.0));
}

double gan_discriminator_loss(std::span<const double> real_probs,
                              std::span<const double> fake_probs) {
  if (real_probs.empty() || fake_probs.empty()) {
    throw DimensionError("gan_discriminator_loss: empty input");
  }
  double real = 0.0, fake = 0.0;
  for (double p : real_probs) real += std::log(std::clamp(p, kProbEps, 1.0 - kProbEps));
  for (double p : fake_probs) fake += std::log(1.0 - std::clamp(p, kProbEps, 1.0 - kProbEps));
  return -(real / static_cast<double>(real_probs.size()) +
           fake / static_cast<double>(fake_probs.size()));
}

Var gan_discriminator_loss(Var real_probs, Var fake_probs) {
  if (real_probs.value().empty() || fake_probs.value().empty()) {
    throw DimensionError("gan_discriminator_loss: empty input");
  }
  Var real = mean(log(clamp(real_probs, kProbEps, 1.0 - kProbEps)));
  Var fake = mean(log(add_scalar(scale(clamp(fake_probs, kProbEps, 1.0 - kProbEps), -1.0), 1.0)));
  return scale(add(real, fake), -1.0);
}

double diversity_loss(std::span<const double> h1, std::span<const double> h2,
                      std::span<const double> h3) {
  if (h1.size() != h2.size() || h1.size() != h3.size()) {
    throw DimensionError("diversity_loss: length mismatch");
  }
  auto pair = [](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = 1.0 - a[i] - b[i];
      s += d * d;
    }
    return std::sqrt(s);
  };
  return pair(h1, h2) + pair(h1, h3) + pair(h2, h3);
}

Var diversity_loss(const std::vector<Var>& hidden) {
  if (hidden.size() < 2) throw DimensionError("diversity_loss: needs at least two features");
  std::vector<Var> terms;
  for (std::size_t j = 0; j < hidden.size(); ++j) {
    for (std::size_t k = j + 1; k < hidden.size(); ++k) {
      if (!hidden[j].value().same_shape(hidden[k].value())) {
        throw DimensionError("diversity_loss: shape mismatch");
      }
      terms.push_back(mean(row_norms(add_scalar(scale(add(hidden[j], hidden[k]), -1.0), 1.0))));
    }
  }
  Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

double discriminator_loss(double mil, double gan, double diver, double lambda3, double lambda4) {
  return mil + lambda3 * gan + lambda4 * diver;
}

Tensor2 ReplayBag::instances() const {
  if (pseudo.rows() == 0) return base->features;
  const Tensor2 parts[] = {base->features, pseudo};
  return vstack(parts);
}

std::size_t replay_count(std::size_t bag_size, double ratio) {
  if (!(ratio >= 0.0)) throw ConfigError("replay ratio must be >= 0");
  return static_cast<std::size_t>(std::lround(ratio * static_cast<double>(bag_size)));
}

std::vector<ReplayBag> compose_replay_bags(std::span<const Bag* const> bags,
                                           const FrozenReplayer* replayer, double r_minus,
                                           double r_plus, Rng& rng) {
  if (!(r_minus >= 0.0) || !(r_plus >= 0.0)) throw ConfigError("replay ratios must be >= 0");
  std::vector<ReplayBag> out;
  out.reserve(bags.size());
  for (const Bag* b : bags) {
    ReplayBag rb;
    rb.base = b;
    rb.source = b->weak_label == 1 ? ClassTag::kAnomaly : ClassTag::kNormal;
    rb.pseudo = Tensor2(0, b->feature_dim());
    if (replayer != nullptr) {
      const double ratio = b->weak_label == 1 ? r_plus : r_minus;
      const std::size_t n = replay_count(b->instance_count(), ratio);
      if (n > 0) rb.pseudo = sample_replay(*replayer, rb.source, n, rng);
    }
    out.push_back(std::move(rb));
  }
  return out;
}

}  // namespace cade
