#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cade/adam.hpp"
#include "cade/datagen.hpp"
#include "cade/dual_generator.hpp"
#include "cade/evaluation.hpp"
#include "cade/multi_discriminator.hpp"

namespace cade {

// cade: dual generators + discriminator ensemble + replay.
// ft: one discriminator fine-tuned on each domain in turn, MIL loss only.
// mtl: the same discriminator stack trained once on the union of all domains.
// vae_gr: two plain VAEs replaying into one discriminator, no adversarial terms.
enum class Regime { kCade, kFt, kMtl, kVaeGr };
const char* to_string(Regime r);
Regime parse_regime(const std::string& name);

struct TrainConfig {
  Regime regime = Regime::kCade;
  std::size_t epochs_per_domain = 10;
  // Positive/negative bag pairs per optimization step.
  std::size_t batch_bags = 1;
  // 0 derives ceil(train bags / (2 * batch_bags)).
  std::size_t steps_per_epoch = 0;
  double lr = 1e-3;
  double replay_ratio_neg = 1.0;  // r-
  double replay_ratio_pos = 1.0;  // r+
  double lambda1 = 1.0;  // generator adversarial
  double lambda2 = 0.1;  // latent distance
  double lambda3 = 1.0;  // discriminator adversarial
  double lambda4 = 0.1;  // diversity
  // Ensemble size for the cade regime (1 or 3); other regimes always use 1.
  std::size_t discriminators = 3;
  std::uint64_t seed = 0;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;

  void validate() const;
};

struct StepLog {
  std::uint64_t step = 0;
  int domain = 0;
  double mil = 0.0;
  double gan_d = 0.0;
  double diver = 0.0;
  double elbo = 0.0;
  double adversarial = 0.0;
  double distance = 0.0;
};
std::string format_step_log(const StepLog& log);

struct ModelState {
  std::optional<DualGenerator> generators;
  std::vector<Discriminator> discriminators;
  AdamState generator_adam;
  AdamState discriminator_adam;
  int t = 1;  // next domain to train, 1-based
  std::optional<FrozenReplayer> replayer;
  // Discriminator init and bag sampling draw from data_rng; everything
  // generator-related draws from gen_rng.
  Rng data_rng;
  Rng gen_rng;
  std::uint64_t global_step = 0;
  std::uint64_t replay_sample_calls = 0;

  ParamSet discriminator_params() const;
  ParamSet generator_params() const;
};

ModelState init_model_state(const TrainConfig& cfg, std::size_t feature_dim);

// Deep immutable copy of the current generators.
FrozenReplayer snapshot_generators(const ModelState& state);

struct TrainHooks {
  AccessAudit* audit = nullptr;
  std::vector<StepLog>* logs = nullptr;
};

// One domain of sequential training. Requires domain.domain_id == state.t;
// advances state.t and captures a fresh replayer when generators exist.
void train_domain(ModelState& state, const DomainDataset& domain, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

struct RunResult {
  ModelState state;
  AucMatrix auc;
  std::vector<StepLog> logs;
};

struct RunOptions {
  AccessAudit* audit = nullptr;
  // Called after each finished domain with the state, the matrix so far and
  // the step logs of that domain (empty when keep_logs is false).
  std::function<void(const ModelState&, const AucMatrix&, std::span<const StepLog>)> on_domain_end;
  // Stop after this many domains (simulated interruption).
  std::optional<int> stop_after_domain;
  bool keep_logs = true;
};

RunResult run_regime(std::span<const DomainDataset> domains, const TrainConfig& cfg,
                     const RunOptions& opts = {});
// Continues a sequential run from a saved state and partially filled matrix.
RunResult resume_regime(std::span<const DomainDataset> domains, const TrainConfig& cfg,
                        ModelState state, AucMatrix auc, const RunOptions& opts = {});

}  // namespace cade
