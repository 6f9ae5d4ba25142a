#pragma once

#include <span>
#include <string>
#include <vector>

#include "cade/datagen.hpp"
#include "cade/dual_generator.hpp"
#include "cade/layers.hpp"

namespace cade {

// Probabilities are clamped to [eps, 1 - eps] before any log.
inline constexpr double kProbEps = 1e-7;

struct DiscriminatorConfig {
  std::size_t feature_dim = 32;
  std::size_t hidden1 = 512;
  std::size_t hidden2 = 32;
};

// Role of a discriminator in the ensemble. D sees every instance, Dn the
// normal stream, Da the anomaly stream.
enum class DiscriminatorRole { kAll = 1, kNormal = 2, kAnomaly = 3 };
const char* to_string(DiscriminatorRole role);

struct DiscriminatorOutput {
  double score = 0.0;
  double real_prob = 0.0;
  std::vector<double> hidden;
};

// Batched outputs, one row per instance.
struct DiscriminatorBatch {
  Tensor2 scores;      // n x 1
  Tensor2 real_probs;  // n x 1
  Tensor2 hidden;      // n x hidden2
};

struct DiscriminatorVars {
  Var score;
  Var real_prob;
  Var hidden;
};

// Two relu layers followed by two sigmoid heads reading the same hidden
// feature: an anomaly-score regressor and a real/fake classifier.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(DiscriminatorRole role, const DiscriminatorConfig& cfg, Rng& rng);
  // Role and layers given explicitly; used by deserialization and tests.
  Discriminator(DiscriminatorRole role, Dense trunk1, Dense trunk2, Dense score_head,
                Dense gan_head);

  DiscriminatorRole role() const { return role_; }
  std::size_t feature_dim() const { return trunk1_.in(); }
  std::size_t hidden_dim() const { return trunk2_.out(); }

  DiscriminatorVars forward(Tape& tape, Var features) const;
  DiscriminatorBatch forward(const Tensor2& features) const;
  DiscriminatorOutput forward(std::span<const double> f) const;

  ParamSet params() const;
  Discriminator clone() const;

 private:
  DiscriminatorRole role_ = DiscriminatorRole::kAll;
  Dense trunk1_;
  Dense trunk2_;
  Dense score_head_;
  Dense gan_head_;
};

// D, Dn, Da in that order (or D alone when count == 1).
std::vector<Discriminator> make_discriminators(std::size_t count, const DiscriminatorConfig& cfg,
                                               Rng& rng);

// max(0, 1 - max(pos) + max(neg)). Throws DimensionError on an empty bag.
double mil_ranking_loss(std::span<const double> pos_scores, std::span<const double> neg_scores);
Var mil_ranking_loss(Var pos_scores, Var neg_scores);

// -[mean log(real) + mean log(1 - fake)] with probabilities clamped by kProbEps.
double gan_discriminator_loss(std::span<const double> real_probs,
                              std::span<const double> fake_probs);
Var gan_discriminator_loss(Var real_probs, Var fake_probs);

// Sum over unordered pairs (j, k) of ||1 - h_j - h_k||_2.
double diversity_loss(std::span<const double> h1, std::span<const double> h2,
                      std::span<const double> h3);
// Batched form over rows (one row per instance), averaged over rows. Works for
// any number of discriminators >= 2.
Var diversity_loss(const std::vector<Var>& hidden);

// L_MIL + lambda3 * L_gan + lambda4 * L_diver.
double discriminator_loss(double mil, double gan, double diver, double lambda3, double lambda4);

// A bag with appended pseudo-features. The base bag is referenced, never copied
// or modified.
struct ReplayBag {
  const Bag* base = nullptr;
  Tensor2 pseudo;  // appended f~, rows may be zero
  ClassTag source = ClassTag::kNormal;

  std::size_t size() const { return base->instance_count() + pseudo.rows(); }
  // Real instances followed by pseudo instances.
  Tensor2 instances() const;
};

// Negative bags receive round(r_minus * |B|) samples from the normal
// generator, positive bags round(r_plus * |B|) from the anomaly generator.
// With no replayer (first domain) bags pass through unchanged.
std::vector<ReplayBag> compose_replay_bags(std::span<const Bag* const> bags,
                                           const FrozenReplayer* replayer, double r_minus,
                                           double r_plus, Rng& rng);
std::size_t replay_count(std::size_t bag_size, double ratio);

}  // namespace cade
