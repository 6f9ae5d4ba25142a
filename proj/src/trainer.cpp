#include "cade/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cade/error.hpp"

namespace cade {

const char* to_string(Regime r) {
  switch (r) {
    case Regime::kCade: return "cade";
    case Regime::kFt: return "ft";
    case Regime::kMtl: return "mtl";
    case Regime::kVaeGr: return "vae_gr";
  }
  return "?";
}

Regime parse_regime(const std::string& name) {
  if (name == "cade") return Regime::kCade;
  if (name == "ft") return Regime::kFt;
  if (name == "mtl") return Regime::kMtl;
  if (name == "vae_gr") return Regime::kVaeGr;
  throw ConfigError("unknown regime \"" + name + "\" (expected cade, ft, mtl or vae_gr)");
}

void TrainConfig::validate() const {
  if (epochs_per_domain < 1) throw ConfigError("epochs_per_domain must be >= 1");
  if (batch_bags < 1) throw ConfigError("batch_bags must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(replay_ratio_neg >= 0.0) || !(replay_ratio_pos >= 0.0)) {
    throw ConfigError("replay ratios must be >= 0");
  }
  for (double l : {lambda1, lambda2, lambda3, lambda4}) {
    if (!std::isfinite(l)) throw ConfigError("lambda weights must be finite");
  }
  if (discriminators != 1 && discriminators != 3) {
    throw ConfigError("discriminators must be 1 or 3");
  }
  if (generator.feature_dim != discriminator.feature_dim) {
    throw ConfigError("generator and discriminator feature_dim differ");
  }
}

std::string format_step_log(const StepLog& l) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "step=%llu domain=%d mil=%.6g gan_d=%.6g diver=%.6g elbo=%.6g adv=%.6g dist=%.6g",
                static_cast<unsigned long long>(l.step), l.domain, l.mil, l.gan_d, l.diver,
                l.elbo, l.adversarial, l.distance);
  return buf;
}

ParamSet ModelState::discriminator_params() const {
  ParamSet s;
  for (const auto& d : discriminators) s.add_all(d.params());
  return s;
}

ParamSet ModelState::generator_params() const {
  return generators ? generators->params() : ParamSet{};
}

namespace {

// Regime-resolved switches.
struct Effective {
  bool generators = false;
  bool tie_shared = true;
  std::size_t discriminators = 1;
  double lambda1 = 0.0, lambda2 = 0.0, lambda3 = 0.0, lambda4 = 0.0;
  double r_neg = 0.0, r_pos = 0.0;
};

Effective resolve(const TrainConfig& cfg) {
  Effective e;
  switch (cfg.regime) {
    case Regime::kCade:
      e.generators = true;
      e.tie_shared = cfg.generator.tie_shared;
      e.discriminators = cfg.discriminators;
      e.lambda1 = cfg.lambda1;
      e.lambda2 = cfg.lambda2;
      e.lambda3 = cfg.lambda3;
      e.lambda4 = cfg.lambda4;
      e.r_neg = cfg.replay_ratio_neg;
      e.r_pos = cfg.replay_ratio_pos;
      break;
    case Regime::kVaeGr:
      e.generators = true;
      e.tie_shared = false;
      e.r_neg = cfg.replay_ratio_neg;
      e.r_pos = cfg.replay_ratio_pos;
      break;
    case Regime::kMtl:
      // Joint oracle for the same discriminator stack, without generators.
      e.discriminators = cfg.discriminators;
      e.lambda4 = cfg.lambda4;
      break;
    case Regime::kFt: break;
  }
  return e;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Reconstruction through the stochastic encoder, outside any tape.
Tensor2 reconstruct(const GeneratorPair& g, const Tensor2& x, Rng& rng) {
  const auto& c = g.config();
  Tensor2 enc = g.encode_batch(x);
  Tensor2 z(x.rows(), c.latent_dim());
  const std::size_t dp = c.private_dim, ds = c.shared_dim;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t i = 0; i < dp; ++i) {
      z(r, i) = enc(r, i) + std::exp(0.5 * enc(r, dp + i)) * rng.normal();
    }
    for (std::size_t i = 0; i < ds; ++i) {
      z(r, dp + i) = enc(r, 2 * dp + i) + std::exp(0.5 * enc(r, 2 * dp + ds + i)) * rng.normal();
    }
  }
  return g.decode(z);
}

Tensor2 stack_features(const std::vector<const Bag*>& bags) {
  std::vector<Tensor2> parts;
  parts.reserve(bags.size());
  for (const Bag* b : bags) parts.push_back(b->features);
  return vstack(parts);
}

Var sum_vars(const std::vector<Var>& v) {
  Var acc = v.front();
  for (std::size_t i = 1; i < v.size(); ++i) acc = add(acc, v[i]);
  return acc;
}

// Training bag references split by weak label.
struct BagRef {
  const DomainDataset* domain;
  std::size_t index;
};

struct BagPool {
  std::vector<BagRef> positive;
  std::vector<BagRef> negative;
  std::size_t total() const { return positive.size() + negative.size(); }
};

BagPool make_pool(std::span<const DomainDataset* const> domains, AccessAudit* audit) {
  BagPool pool;
  for (const DomainDataset* d : domains) {
    for (std::size_t i = 0; i < d->train_bags.size(); ++i) {
      const Bag& b = read_train_bag(*d, i, audit);
      (b.weak_label == 1 ? pool.positive : pool.negative).push_back(BagRef{d, i});
    }
  }
  if (pool.positive.empty() || pool.negative.empty()) {
    throw ConfigError("training data needs at least one positive and one negative bag");
  }
  return pool;
}

const Bag* draw(const std::vector<BagRef>& refs, Rng& rng, AccessAudit* audit) {
  const BagRef& r = refs[rng.index(refs.size())];
  return &read_train_bag(*r.domain, r.index, audit);
}

struct StepContext {
  ModelState& state;
  const Effective& eff;
  const TrainConfig& cfg;
};

void discriminator_step(StepContext& ctx, const std::vector<const Bag*>& pos,
                        const std::vector<const Bag*>& neg, StepLog& log) {
  ModelState& s = ctx.state;
  const Effective& e = ctx.eff;
  const FrozenReplayer* replayer = nullptr;
  if (s.replayer && (e.r_neg > 0.0 || e.r_pos > 0.0)) {
    replayer = &*s.replayer;
    ++s.replay_sample_calls;
  }
  auto pos_r = compose_replay_bags(pos, replayer, e.r_neg, e.r_pos, s.gen_rng);
  auto neg_r = compose_replay_bags(neg, replayer, e.r_neg, e.r_pos, s.gen_rng);

  std::vector<Tensor2> parts;
  std::vector<std::pair<std::size_t, std::size_t>> pos_rows, neg_rows;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < pos_r.size(); ++i) {
    parts.push_back(pos_r[i].instances());
    pos_rows.emplace_back(offset, parts.back().rows());
    offset += parts.back().rows();
    parts.push_back(neg_r[i].instances());
    neg_rows.emplace_back(offset, parts.back().rows());
    offset += parts.back().rows();
  }

  Tape tape;
  Var x = tape.constant(vstack(parts));
  const bool use_gan = e.lambda3 != 0.0 && s.generators.has_value();
  Tensor2 real_neg, real_pos, fake_neg, fake_pos;
  if (use_gan) {
    real_neg = stack_features(neg);
    real_pos = stack_features(pos);
    fake_neg = reconstruct(s.generators->normal(), real_neg, s.gen_rng);
    fake_pos = reconstruct(s.generators->anomaly(), real_pos, s.gen_rng);
  }

  std::vector<Var> terms;
  std::vector<Var> hidden;
  double mil_total = 0.0, gan_total = 0.0;
  for (const auto& d : s.discriminators) {
    auto out = d.forward(tape, x);
    hidden.push_back(out.hidden);
    std::vector<Var> mils;
    for (std::size_t i = 0; i < pos_rows.size(); ++i) {
      mils.push_back(mil_ranking_loss(slice_rows(out.score, pos_rows[i].first, pos_rows[i].second),
                                      slice_rows(out.score, neg_rows[i].first, neg_rows[i].second)));
    }
    Var mil = scale(sum_vars(mils), 1.0 / static_cast<double>(mils.size()));
    mil_total += mil.value().item();
    terms.push_back(mil);
    if (use_gan) {
      const Tensor2* real_a = &real_neg;
      const Tensor2* fake_a = &fake_neg;
      Tensor2 real_all, fake_all;
      switch (d.role()) {
        case DiscriminatorRole::kNormal: break;
        case DiscriminatorRole::kAnomaly:
          real_a = &real_pos;
          fake_a = &fake_pos;
          break;
        case DiscriminatorRole::kAll: {
          const Tensor2 rp[] = {real_neg, real_pos};
          const Tensor2 fp[] = {fake_neg, fake_pos};
          real_all = vstack(rp);
          fake_all = vstack(fp);
          real_a = &real_all;
          fake_a = &fake_all;
          break;
        }
      }
      Var real_p = d.forward(tape, tape.constant(*real_a)).real_prob;
      Var fake_p = d.forward(tape, tape.constant(*fake_a)).real_prob;
      Var gan = gan_discriminator_loss(real_p, fake_p);
      gan_total += gan.value().item();
      terms.push_back(scale(gan, e.lambda3));
    }
  }
  double diver = 0.0;
  if (hidden.size() > 1 && e.lambda4 != 0.0) {
    Var dv = diversity_loss(hidden);
    diver = dv.value().item();
    terms.push_back(scale(dv, e.lambda4));
  }
  log.mil = mil_total;
  log.gan_d = gan_total;
  log.diver = diver;

  Var total = sum_vars(terms);
  if (!std::isfinite(total.value().item())) {
    throw NumericError("discriminator loss is not finite");
  }
  tape.backward(total);
  const ParamSet params = s.discriminator_params();
  adam_step(params, tape.gradients(params), s.discriminator_adam);
}

void generator_step(StepContext& ctx, const std::vector<const Bag*>& pos,
                    const std::vector<const Bag*>& neg, StepLog& log) {
  ModelState& s = ctx.state;
  const Effective& e = ctx.eff;
  GeneratorBatch current{stack_features(neg), stack_features(pos)};
  std::optional<GeneratorBatch> replay;
  if (s.replayer) {
    ++s.replay_sample_calls;
    replay = GeneratorBatch{
        sample_replay(*s.replayer, ClassTag::kNormal, current.normal.rows(), s.gen_rng),
        sample_replay(*s.replayer, ClassTag::kAnomaly, current.anomaly.rows(), s.gen_rng)};
  }
  Tape tape;
  std::span<const Discriminator> discs;
  if (e.lambda1 != 0.0) discs = s.discriminators;
  auto terms = generator_loss(tape, *s.generators, current, replay ? &*replay : nullptr, discs,
                              GeneratorLossWeights{e.lambda1, e.lambda2}, s.gen_rng);
  log.elbo = terms.elbo_current + terms.elbo_replay;
  log.adversarial = terms.adversarial;
  log.distance = terms.distance;
  tape.backward(terms.total);
  const ParamSet params = s.generator_params();
  adam_step(params, tape.gradients(params), s.generator_adam);
}

void train_pool(ModelState& state, const BagPool& pool, const TrainConfig& cfg,
                const Effective& eff, int domain_id, std::size_t source_bags,
                AccessAudit* audit, std::vector<StepLog>* logs) {
  const std::size_t steps =
      cfg.steps_per_epoch > 0
          ? cfg.steps_per_epoch
          : std::max<std::size_t>(1, (source_bags + 2 * cfg.batch_bags - 1) / (2 * cfg.batch_bags));
  StepContext ctx{state, eff, cfg};
  StepLog last;
  for (std::size_t epoch = 0; epoch < cfg.epochs_per_domain; ++epoch) {
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<const Bag*> pos, neg;
      for (std::size_t b = 0; b < cfg.batch_bags; ++b) {
        pos.push_back(draw(pool.positive, state.data_rng, audit));
        neg.push_back(draw(pool.negative, state.data_rng, audit));
      }
      StepLog log;
      log.step = state.global_step;
      log.domain = domain_id;
      try {
        discriminator_step(ctx, pos, neg, log);
        if (state.generators) generator_step(ctx, pos, neg, log);
      } catch (const NumericError& err) {
        throw NumericError(std::string(err.what()) + " at step " + std::to_string(log.step) +
                           " of domain " + std::to_string(domain_id) +
                           "; last finite step: " + format_step_log(last));
      }
      ++state.global_step;
      last = log;
      if (logs != nullptr) logs->push_back(log);
    }
  }
}

}  // namespace

ModelState init_model_state(const TrainConfig& cfg, std::size_t feature_dim) {
  cfg.validate();
  const Effective e = resolve(cfg);
  ModelState s;
  s.data_rng = Rng(mix_seed(cfg.seed, 0));
  s.gen_rng = Rng(mix_seed(cfg.seed, 1));
  DiscriminatorConfig dc = cfg.discriminator;
  dc.feature_dim = feature_dim;
  s.discriminators = make_discriminators(e.discriminators, dc, s.data_rng);
  const AdamOptions opts{cfg.lr, 0.9, 0.999, 1e-8};
  s.discriminator_adam = AdamState(s.discriminator_params(), opts);
  if (e.generators) {
    GeneratorConfig gc = cfg.generator;
    gc.feature_dim = feature_dim;
    gc.tie_shared = e.tie_shared;
    s.generators = DualGenerator::create(gc, s.gen_rng);
    s.generator_adam = AdamState(s.generator_params(), opts);
  } else {
    s.generator_adam = AdamState(opts);
  }
  return s;
}

FrozenReplayer snapshot_generators(const ModelState& state) {
  if (!state.generators) throw ConfigError("snapshot_generators: model has no generators");
  return FrozenReplayer(*state.generators);
}

void train_domain(ModelState& state, const DomainDataset& domain, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.regime == Regime::kMtl) {
    throw ConfigError("train_domain: mtl trains once on the union, use run_regime");
  }
  if (domain.domain_id != state.t) {
    throw ConfigError("train_domain: expected domain " + std::to_string(state.t) + ", got " +
                      std::to_string(domain.domain_id));
  }
  const Effective eff = resolve(cfg);
  if (hooks.audit != nullptr) hooks.audit->set_active_domain(domain.domain_id);
  const DomainDataset* one[] = {&domain};
  const BagPool pool = make_pool(one, hooks.audit);
  // Each domain starts from fresh optimizer moments.
  state.discriminator_adam = AdamState(state.discriminator_params(), state.discriminator_adam.options);
  if (state.generators) {
    state.generator_adam = AdamState(state.generator_params(), state.generator_adam.options);
  }
  train_pool(state, pool, cfg, eff, domain.domain_id, domain.train_bags.size(), hooks.audit,
             hooks.logs);
  ++state.t;
  if (state.generators) state.replayer.emplace(snapshot_generators(state));
}

namespace {

void check_domains(std::span<const DomainDataset> domains) {
  if (domains.empty()) throw ConfigError("run_regime: at least one domain required");
  const std::size_t k = domains.front().feature_dim();
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i].domain_id != static_cast<int>(i + 1)) {
      throw ConfigError("run_regime: domains must be numbered 1..T in order");
    }
    if (domains[i].feature_dim() != k) throw ConfigError("run_regime: feature_dim differs");
  }
}

void record_row(AucMatrix& auc, const ModelState& s, std::span<const DomainDataset> domains,
                std::size_t row) {
  auto ev = evaluate_domains(s.discriminators, domains, row + 1);
  auc.set_row(row, std::move(ev.per_domain), ev.pooled_seen, ev.pooled_all);
}

}  // namespace

RunResult resume_regime(std::span<const DomainDataset> domains, const TrainConfig& cfg,
                        ModelState state, AucMatrix auc, const RunOptions& opts) {
  check_domains(domains);
  if (cfg.regime == Regime::kMtl) throw ConfigError("mtl runs cannot be resumed");
  if (auc.domains() != domains.size()) throw ConfigError("resume: matrix size mismatch");
  RunResult result{std::move(state), std::move(auc), {}};
  TrainHooks hooks{opts.audit, opts.keep_logs ? &result.logs : nullptr};
  const int total = static_cast<int>(domains.size());
  while (result.state.t <= total) {
    if (opts.stop_after_domain && result.state.t > *opts.stop_after_domain) break;
    const int t = result.state.t;
    const std::size_t first_log = result.logs.size();
    train_domain(result.state, domains[static_cast<std::size_t>(t - 1)], cfg, hooks);
    record_row(result.auc, result.state, domains, static_cast<std::size_t>(t - 1));
    if (opts.on_domain_end) {
      opts.on_domain_end(result.state, result.auc, std::span(result.logs).subspan(first_log));
    }
  }
  return result;
}

RunResult run_regime(std::span<const DomainDataset> domains, const TrainConfig& cfg,
                     const RunOptions& opts) {
  check_domains(domains);
  ModelState state = init_model_state(cfg, domains.front().feature_dim());
  if (cfg.regime != Regime::kMtl) {
    return resume_regime(domains, cfg, std::move(state), AucMatrix(domains.size()), opts);
  }

  RunResult result{std::move(state), AucMatrix(domains.size()), {}};
  std::vector<const DomainDataset*> all;
  std::size_t bags = 0;
  for (const auto& d : domains) {
    all.push_back(&d);
    bags += d.train_bags.size();
  }
  // Joint oracle: one phase over the union, same epoch count as one domain.
  if (opts.audit != nullptr) opts.audit->set_active_domain(static_cast<int>(domains.size()));
  const BagPool pool = make_pool(all, nullptr);
  train_pool(result.state, pool, cfg, resolve(cfg), 0, bags, nullptr,
             opts.keep_logs ? &result.logs : nullptr);
  result.state.t = static_cast<int>(domains.size()) + 1;
  for (std::size_t r = 0; r < domains.size(); ++r) record_row(result.auc, result.state, domains, r);
  if (opts.on_domain_end) opts.on_domain_end(result.state, result.auc, result.logs);
  return result;
}

}  // namespace cade
