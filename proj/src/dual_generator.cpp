#include "cade/dual_generator.hpp"

#include <cmath>

#include "cade/error.hpp"
#include "cade/multi_discriminator.hpp"

namespace cade {

const char* to_string(ClassTag tag) { return tag == ClassTag::kNormal ? "normal" : "anomaly"; }

namespace {

ParamPtr make_param(const std::string& id, std::size_t rows, std::size_t cols, double stddev,
                    Rng& rng) {
  Tensor2 v(rows, cols, 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = stddev * rng.normal();
  return std::make_shared<Parameter>(id, std::move(v));
}

ParamPtr copy_param(const ParamPtr& p) { return std::make_shared<Parameter>(*p); }

void check_cols(const Tensor2& t, std::size_t cols, const char* what) {
  if (t.cols() != cols) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(cols) +
                         " columns, got " + t.shape_string());
  }
}

}  // namespace

PosteriorVars GeneratorPair::encode(Tape& tape, Var features) const {
  check_cols(features.value(), cfg_.feature_dim, "GeneratorPair::encode");
  const std::size_t dp = cfg_.private_dim, ds = cfg_.shared_dim;
  Var hp = enc_private_hidden_.forward(tape, features);
  Var op = enc_private_head_.forward(tape, hp);
  Var hs = enc_shared_hidden_.forward(tape, features);
  Var os = enc_shared_head_.forward(tape, hs);
  return PosteriorVars{slice_cols(op, 0, dp), slice_cols(op, dp, dp), slice_cols(os, 0, ds),
                       slice_cols(os, ds, ds)};
}

Tensor2 GeneratorPair::encode_batch(const Tensor2& features) const {
  check_cols(features, cfg_.feature_dim, "GeneratorPair::encode");
  Tensor2 op = enc_private_head_.forward(enc_private_hidden_.forward(features));
  Tensor2 os = enc_shared_head_.forward(enc_shared_hidden_.forward(features));
  Tensor2 out(features.rows(), op.cols() + os.cols());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < op.cols(); ++c) out(r, c) = op(r, c);
    for (std::size_t c = 0; c < os.cols(); ++c) out(r, op.cols() + c) = os(r, c);
  }
  return out;
}

LatentPosterior GeneratorPair::encode(std::span<const double> f) const {
  Tensor2 enc = encode_batch(Tensor2::row(f));
  const std::size_t dp = cfg_.private_dim, ds = cfg_.shared_dim;
  auto row = enc.row_span(0);
  LatentPosterior post;
  post.mu_private.assign(row.begin(), row.begin() + dp);
  post.logvar_private.assign(row.begin() + dp, row.begin() + 2 * dp);
  post.mu_shared.assign(row.begin() + 2 * dp, row.begin() + 2 * dp + ds);
  post.logvar_shared.assign(row.begin() + 2 * dp + ds, row.begin() + 2 * dp + 2 * ds);
  return post;
}

Var GeneratorPair::decode(Tape& tape, Var z) const {
  check_cols(z.value(), cfg_.latent_dim(), "GeneratorPair::decode");
  Var zp = slice_cols(z, 0, cfg_.private_dim);
  Var zs = slice_cols(z, cfg_.private_dim, cfg_.shared_dim);
  Var pre = add(matmul(zp, tape.param(dec_private_in_)), matmul(zs, tape.param(dec_shared_in_)));
  Var h = relu(add_bias(pre, tape.param(dec_bias_)));
  return dec_out_.forward(tape, h);
}

Tensor2 GeneratorPair::decode(const Tensor2& z) const {
  check_cols(z, cfg_.latent_dim(), "GeneratorPair::decode");
  const std::size_t dp = cfg_.private_dim;
  const Tensor2& wp = dec_private_in_->value();
  const Tensor2& ws = dec_shared_in_->value();
  const Tensor2& b = dec_bias_->value();
  Tensor2 h(z.rows(), cfg_.hidden, 0.0);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t j = 0; j < cfg_.hidden; ++j) {
      double acc = b[j];
      for (std::size_t c = 0; c < dp; ++c) acc += z(r, c) * wp(c, j);
      for (std::size_t c = 0; c < cfg_.shared_dim; ++c) acc += z(r, dp + c) * ws(c, j);
      h(r, j) = acc > 0.0 ? acc : 0.0;
    }
  }
  return dec_out_.forward(h);
}

std::vector<double> GeneratorPair::decode(std::span<const double> z) const {
  Tensor2 out = decode(Tensor2::row(z));
  return out.values();
}

ParamSet GeneratorPair::params() const {
  ParamSet s;
  enc_private_hidden_.register_params(s);
  enc_private_head_.register_params(s);
  enc_shared_hidden_.register_params(s);
  enc_shared_head_.register_params(s);
  s.add(dec_private_in_);
  s.add(dec_shared_in_);
  s.add(dec_bias_);
  dec_out_.register_params(s);
  return s;
}

ParamSet GeneratorPair::shared_params() const {
  ParamSet s;
  if (!cfg_.tie_shared) return s;
  enc_shared_hidden_.register_params(s);
  enc_shared_head_.register_params(s);
  s.add(dec_shared_in_);
  return s;
}

DualGenerator DualGenerator::create(const GeneratorConfig& cfg, Rng& rng) {
  if (cfg.feature_dim == 0 || cfg.hidden == 0 || cfg.private_dim == 0 || cfg.shared_dim == 0) {
    throw ConfigError("GeneratorConfig: all sizes must be >= 1");
  }
  const std::size_t k = cfg.feature_dim, h = cfg.hidden;
  const std::size_t dp = cfg.private_dim, ds = cfg.shared_dim;
  const double dec_in_std = std::sqrt(2.0 / static_cast<double>(dp + ds));

  auto build = [&](ClassTag tag, const GeneratorPair* tie_to) {
    GeneratorPair g;
    g.tag_ = tag;
    g.cfg_ = cfg;
    const std::string own = std::string("gen.") + to_string(tag) + ".";
    g.enc_private_hidden_ = Dense(own + "enc_private.hidden", k, h, Activation::kRelu, rng);
    g.enc_private_head_ = Dense(own + "enc_private.head", h, 2 * dp, Activation::kNone, rng);
    if (tie_to != nullptr) {
      g.enc_shared_hidden_ = tie_to->enc_shared_hidden_;
      g.enc_shared_head_ = tie_to->enc_shared_head_;
      g.dec_shared_in_ = tie_to->dec_shared_in_;
    } else {
      const std::string sh = cfg.tie_shared ? std::string("gen.shared.") : own;
      g.enc_shared_hidden_ = Dense(sh + "enc_shared.hidden", k, h, Activation::kRelu, rng);
      g.enc_shared_head_ = Dense(sh + "enc_shared.head", h, 2 * ds, Activation::kNone, rng);
      g.dec_shared_in_ = make_param(sh + "dec.shared_in", ds, h, dec_in_std, rng);
    }
    g.dec_private_in_ = make_param(own + "dec.private_in", dp, h, dec_in_std, rng);
    g.dec_bias_ = std::make_shared<Parameter>(own + "dec.bias", Tensor2(1, h, 0.0));
    g.dec_out_ = Dense(own + "dec.out", h, k, Activation::kNone, rng);
    return g;
  };

  DualGenerator d;
  d.normal_ = build(ClassTag::kNormal, nullptr);
  d.anomaly_ = build(ClassTag::kAnomaly, cfg.tie_shared ? &d.normal_ : nullptr);
  return d;
}

ParamSet DualGenerator::params() const {
  ParamSet s = normal_.params();
  s.add_all(anomaly_.params());
  return s;
}

DualGenerator DualGenerator::clone() const {
  auto copy_pair = [](const GeneratorPair& src, const GeneratorPair* tie_to) {
    GeneratorPair g = src;
    g.enc_private_hidden_ = src.enc_private_hidden_.clone();
    g.enc_private_head_ = src.enc_private_head_.clone();
    g.dec_private_in_ = copy_param(src.dec_private_in_);
    g.dec_bias_ = copy_param(src.dec_bias_);
    g.dec_out_ = src.dec_out_.clone();
    if (tie_to != nullptr) {
      g.enc_shared_hidden_ = tie_to->enc_shared_hidden_;
      g.enc_shared_head_ = tie_to->enc_shared_head_;
      g.dec_shared_in_ = tie_to->dec_shared_in_;
    } else {
      g.enc_shared_hidden_ = src.enc_shared_hidden_.clone();
      g.enc_shared_head_ = src.enc_shared_head_.clone();
      g.dec_shared_in_ = copy_param(src.dec_shared_in_);
    }
    return g;
  };
  DualGenerator d;
  d.normal_ = copy_pair(normal_, nullptr);
  d.anomaly_ = copy_pair(anomaly_, config().tie_shared ? &d.normal_ : nullptr);
  return d;
}

double kl_diag_gaussian(std::span<const double> mu, std::span<const double> logvar) {
  if (mu.size() != logvar.size()) throw DimensionError("kl_diag_gaussian: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    kl += mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i];
  }
  return 0.5 * kl;
}

Var kl_diag_gaussian(Var mu, Var logvar) {
  if (!mu.value().same_shape(logvar.value())) {
    throw DimensionError("kl_diag_gaussian: shape mismatch");
  }
  const double rows = static_cast<double>(mu.rows());
  // sum(mu^2 + exp(lv) - lv) - n*d, halved and averaged over rows.
  Var inner = sub(add(square(mu), exp(logvar)), logvar);
  const double offset = static_cast<double>(mu.value().size());
  return scale(add_scalar(sum(inner), -offset), 0.5 / rows);
}

std::vector<double> reparameterize(const LatentPosterior& post, std::span<const double> noise) {
  const std::size_t dp = post.mu_private.size(), ds = post.mu_shared.size();
  if (noise.size() != dp + ds) {
    throw DimensionError("reparameterize: noise length " + std::to_string(noise.size()) +
                         ", expected " + std::to_string(dp + ds));
  }
  if (post.logvar_private.size() != dp || post.logvar_shared.size() != ds) {
    throw DimensionError("reparameterize: posterior block length mismatch");
  }
  std::vector<double> z(dp + ds);
  for (std::size_t i = 0; i < dp; ++i) {
    z[i] = post.mu_private[i] + std::exp(0.5 * post.logvar_private[i]) * noise[i];
  }
  for (std::size_t i = 0; i < ds; ++i) {
    z[dp + i] = post.mu_shared[i] + std::exp(0.5 * post.logvar_shared[i]) * noise[dp + i];
  }
  return z;
}

Var reparameterize(const PosteriorVars& post, Var noise) {
  Var mu = concat_cols({post.mu_private, post.mu_shared});
  Var lv = concat_cols({post.logvar_private, post.logvar_shared});
  if (!noise.value().same_shape(mu.value())) {
    throw DimensionError("reparameterize: noise " + noise.value().shape_string() +
                         " vs posterior " + mu.value().shape_string());
  }
  return add(mu, mul(exp(scale(lv, 0.5)), noise));
}

Tensor2 sample_replay(const FrozenReplayer& replayer, ClassTag tag, std::size_t count, Rng& rng) {
  const auto& pair = replayer.pair(tag);
  if (count == 0) return Tensor2(0, pair.config().feature_dim);
  return pair.decode(rng.normal_tensor(count, pair.config().latent_dim()));
}

double latent_distance(std::span<const double> mu_normal, std::span<const double> mu_anomaly) {
  if (mu_normal.size() != mu_anomaly.size()) {
    throw DimensionError("latent_distance: length mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < mu_normal.size(); ++i) {
    const double d = 1.0 - mu_normal[i] + mu_anomaly[i];
    s += d * d;
  }
  return std::sqrt(s);
}

namespace {

struct ElboResult {
  Var loss;              // negative ELBO averaged over rows
  Var reconstruction;    // rows x K
  Var mu_private_mean;   // 1 x d_p
};

ElboResult negative_elbo(Tape& tape, const GeneratorPair& g, const Tensor2& features, Rng& rng) {
  Var x = tape.constant(features);
  PosteriorVars post = g.encode(tape, x);
  Var noise = tape.constant(rng.normal_tensor(features.rows(), g.config().latent_dim()));
  Var z = reparameterize(post, noise);
  Var recon = g.decode(tape, z);
  Var nll = scale(sum(square(sub(x, recon))), 0.5 / static_cast<double>(features.rows()));
  Var kl = add(kl_diag_gaussian(post.mu_private, post.logvar_private),
               kl_diag_gaussian(post.mu_shared, post.logvar_shared));
  return ElboResult{add(nll, kl), recon, mean_rows(post.mu_private)};
}

}  // namespace

GeneratorLossTerms generator_loss(Tape& tape, const DualGenerator& gen,
                                  const GeneratorBatch& current, const GeneratorBatch* replay,
                                  std::span<const Discriminator> discriminators,
                                  const GeneratorLossWeights& weights, Rng& rng) {
  if (current.normal.rows() == 0 && current.anomaly.rows() == 0) {
    throw DimensionError("generator_loss: current batch is empty");
  }
  GeneratorLossTerms terms;
  std::vector<Var> parts;

  std::optional<ElboResult> cur_n, cur_a;
  if (current.normal.rows() > 0) cur_n = negative_elbo(tape, gen.normal(), current.normal, rng);
  if (current.anomaly.rows() > 0) {
    cur_a = negative_elbo(tape, gen.anomaly(), current.anomaly, rng);
  }
  for (const auto* r : {&cur_n, &cur_a}) {
    if (*r) {
      parts.push_back((*r)->loss);
      terms.elbo_current += (*r)->loss.value().item();
    }
  }
  terms.elbo_groups = 1;

  if (replay != nullptr) {
    terms.elbo_groups = 2;
    if (replay->normal.rows() > 0) {
      Var l = negative_elbo(tape, gen.normal(), replay->normal, rng).loss;
      parts.push_back(l);
      terms.elbo_replay += l.value().item();
    }
    if (replay->anomaly.rows() > 0) {
      Var l = negative_elbo(tape, gen.anomaly(), replay->anomaly, rng).loss;
      parts.push_back(l);
      terms.elbo_replay += l.value().item();
    }
  }

  if (weights.adversarial != 0.0 && !discriminators.empty()) {
    std::vector<Var> recons;
    if (cur_n) recons.push_back(cur_n->reconstruction);
    if (cur_a) recons.push_back(cur_a->reconstruction);
    Var fake = recons.size() == 1 ? recons.front() : concat_rows(recons);
    std::vector<Var> per_disc;
    for (const auto& d : discriminators) {
      Var p = clamp(d.forward(tape, fake).real_prob, kProbEps, 1.0 - kProbEps);
      per_disc.push_back(scale(mean(log(p)), -1.0));
    }
    Var adv = per_disc.front();
    for (std::size_t i = 1; i < per_disc.size(); ++i) adv = add(adv, per_disc[i]);
    adv = scale(adv, 1.0 / static_cast<double>(per_disc.size()));
    terms.adversarial = adv.value().item();
    parts.push_back(scale(adv, weights.adversarial));
  }

  if (weights.distance != 0.0 && cur_n && cur_a) {
    Var diff = add_scalar(sub(cur_a->mu_private_mean, cur_n->mu_private_mean), 1.0);
    Var dist = row_norms(diff);
    terms.distance = dist.value().item();
    parts.push_back(scale(dist, weights.distance));
  }

  Var total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
  if (!std::isfinite(total.value().item())) {
    throw NumericError("generator_loss: non-finite loss (elbo_current=" +
                       std::to_string(terms.elbo_current) +
                       ", elbo_replay=" + std::to_string(terms.elbo_replay) +
                       ", adversarial=" + std::to_string(terms.adversarial) +
                       ", distance=" + std::to_string(terms.distance) + ")");
  }
  terms.total = total;
  return terms;
}

}  // namespace cade
