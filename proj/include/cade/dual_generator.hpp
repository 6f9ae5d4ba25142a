#pragma once

// Class-conditional VAE-GAN generators for feature replay.
//
// Each class (normal / anomaly) owns a private latent block; a second latent
// block is "shared": its encoder branch and its decoder input weights are the
// identical Parameter objects in both class generators, so both classes train
// one common pathway.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cade/layers.hpp"

namespace cade {

class Discriminator;

enum class ClassTag { kNormal, kAnomaly };
const char* to_string(ClassTag tag);

struct GeneratorConfig {
  std::size_t feature_dim = 32;
  std::size_t hidden = 64;
  std::size_t private_dim = 16;
  std::size_t shared_dim = 16;
  // False yields two independent plain VAEs (no shared pathway).
  bool tie_shared = true;

  std::size_t latent_dim() const { return private_dim + shared_dim; }
};

struct LatentPosterior {
  std::vector<double> mu_private;
  std::vector<double> logvar_private;
  std::vector<double> mu_shared;
  std::vector<double> logvar_shared;
};

// Batched posterior on a tape, one row per instance.
struct PosteriorVars {
  Var mu_private;
  Var logvar_private;
  Var mu_shared;
  Var logvar_shared;
};

class GeneratorPair {
 public:
  GeneratorPair() = default;

  ClassTag class_tag() const { return tag_; }
  const GeneratorConfig& config() const { return cfg_; }

  PosteriorVars encode(Tape& tape, Var features) const;
  LatentPosterior encode(std::span<const double> f) const;
  // Batched inference-only encoding: columns are [mu_p | logvar_p | mu_s | logvar_s].
  Tensor2 encode_batch(const Tensor2& features) const;

  Var decode(Tape& tape, Var z) const;
  Tensor2 decode(const Tensor2& z) const;
  std::vector<double> decode(std::span<const double> z) const;

  ParamSet params() const;
  // Parameters of the shared pathway (empty when untied).
  ParamSet shared_params() const;

 private:
  friend class DualGenerator;

  ClassTag tag_ = ClassTag::kNormal;
  GeneratorConfig cfg_;
  Dense enc_private_hidden_;
  Dense enc_private_head_;
  Dense enc_shared_hidden_;
  Dense enc_shared_head_;
  ParamPtr dec_private_in_;
  ParamPtr dec_shared_in_;
  ParamPtr dec_bias_;
  Dense dec_out_;
};

class DualGenerator {
 public:
  DualGenerator() = default;
  static DualGenerator create(const GeneratorConfig& cfg, Rng& rng);

  const GeneratorPair& normal() const { return normal_; }
  const GeneratorPair& anomaly() const { return anomaly_; }
  const GeneratorPair& pair(ClassTag tag) const {
    return tag == ClassTag::kNormal ? normal_ : anomaly_;
  }
  const GeneratorConfig& config() const { return normal_.cfg_; }

  // Union of both pairs' parameters, tied entries listed once.
  ParamSet params() const;
  // Deep copy; the tie between the two pairs is preserved inside the copy.
  DualGenerator clone() const;

 private:
  GeneratorPair normal_;
  GeneratorPair anomaly_;
};

// Immutable snapshot of both generators taken at a domain boundary.
class FrozenReplayer {
 public:
  explicit FrozenReplayer(const DualGenerator& generators) : gen_(generators.clone()) {}

  const DualGenerator& generators() const { return gen_; }
  const GeneratorPair& pair(ClassTag tag) const { return gen_.pair(tag); }

 private:
  DualGenerator gen_;
};

// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar).
double kl_diag_gaussian(std::span<const double> mu, std::span<const double> logvar);
// Per-row KL summed over columns, averaged over rows -> 1x1.
Var kl_diag_gaussian(Var mu, Var logvar);

// z = mu + exp(logvar / 2) * noise, private block first.
std::vector<double> reparameterize(const LatentPosterior& post, std::span<const double> noise);
Var reparameterize(const PosteriorVars& post, Var noise);

// `count` features decoded from z ~ N(0, I) through the frozen decoder of `tag`.
Tensor2 sample_replay(const FrozenReplayer& replayer, ClassTag tag, std::size_t count, Rng& rng);

// Current-domain (or replayed) features, one matrix per class. Either may
// have zero rows.
struct GeneratorBatch {
  Tensor2 normal;
  Tensor2 anomaly;
};

struct GeneratorLossWeights {
  double adversarial = 1.0;  // lambda1
  double distance = 0.1;     // lambda2
};

struct GeneratorLossTerms {
  Var total;
  double elbo_current = 0.0;
  double elbo_replay = 0.0;
  double adversarial = 0.0;
  double distance = 0.0;
  int elbo_groups = 0;  // 1 without replay, 2 with
};

// Minimized generator objective: for each of {current, replay} the negative
// ELBO (0.5 * ||f - f_hat||^2 + KL_private + KL_shared, averaged over
// instances, summed over the two classes), plus lambda1 times the mean over
// discriminators of -log D_gan(f_hat) on current reconstructions, plus
// lambda2 * ||1 - mu_n + mu_a||_2 over batch means of the private posterior
// means. Replay terms are skipped when `replay` is null.
GeneratorLossTerms generator_loss(Tape& tape, const DualGenerator& gen,
                                  const GeneratorBatch& current, const GeneratorBatch* replay,
                                  std::span<const Discriminator> discriminators,
                                  const GeneratorLossWeights& weights, Rng& rng);

// The distance term alone, lambda2 excluded.
double latent_distance(std::span<const double> mu_normal, std::span<const double> mu_anomaly);

}  // namespace cade
