#include <cmath>

#include "cade/adam.hpp"
#include "cade/dual_generator.hpp"
#include "cade/error.hpp"
#include "cade/multi_discriminator.hpp"
#include "cade/trainer.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cade;
using cade::testing::check_gradients;

namespace {

GeneratorConfig small_gen(bool tied = true) {
  GeneratorConfig c;
  c.feature_dim = 6;
  c.hidden = 8;
  c.private_dim = 3;
  c.shared_dim = 2;
  c.tie_shared = tied;
  return c;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST_CASE("encode returns the posterior shape and is deterministic") {
  Rng rng(1);
  const auto gen = DualGenerator::create(small_gen(), rng);
  const std::vector<double> f = {0.1, -0.2, 0.3, 0.4, -0.5, 0.6};
  for (const auto* g : {&gen.normal(), &gen.anomaly()}) {
    const auto p = g->encode(f);
    CHECK(p.mu_private.size() == 3);
    CHECK(p.logvar_private.size() == 3);
    CHECK(p.mu_shared.size() == 2);
    CHECK(p.logvar_shared.size() == 2);
    const auto q = g->encode(f);
    CHECK(p.mu_private == q.mu_private);
    CHECK(p.logvar_shared == q.logvar_shared);
  }
  CHECK_THROWS_AS(gen.normal().encode(std::vector<double>(5, 0.0)), DimensionError);
}

TEST_CASE("tied shared pathway: identical objects and identical shared outputs") {
  Rng rng(2);
  const auto gen = DualGenerator::create(small_gen(true), rng);
  const auto sn = gen.normal().shared_params();
  const auto sa = gen.anomaly().shared_params();
  REQUIRE(sn.size() > 0);
  REQUIRE(sn.size() == sa.size());
  for (std::size_t i = 0; i < sn.size(); ++i) {
    CHECK(sn.entries()[i].get() == sa.entries()[i].get());
  }
  const std::vector<double> f = {1, 2, 3, -1, -2, -3};
  const auto pn = gen.normal().encode(f);
  const auto pa = gen.anomaly().encode(f);
  CHECK(pn.mu_shared == pa.mu_shared);
  CHECK(pn.logvar_shared == pa.logvar_shared);
  CHECK(pn.mu_private != pa.mu_private);

  Rng rng2(2);
  const auto untied = DualGenerator::create(small_gen(false), rng2);
  CHECK(untied.normal().shared_params().size() == 0);
  CHECK(untied.normal().encode(f).mu_shared != untied.anomaly().encode(f).mu_shared);
}

TEST_CASE("clone keeps the tie inside the copy and is independent of the source") {
  Rng rng(3);
  const auto gen = DualGenerator::create(small_gen(), rng);
  const auto copy = gen.clone();
  const auto cn = copy.normal().shared_params();
  const auto ca = copy.anomaly().shared_params();
  for (std::size_t i = 0; i < cn.size(); ++i) {
    CHECK(cn.entries()[i].get() == ca.entries()[i].get());
    CHECK(cn.entries()[i].get() != gen.normal().shared_params().entries()[i].get());
  }
  CHECK(copy.params().size() == gen.params().size());
}

TEST_CASE("reparameterize: zero noise, unit variance and shape errors") {
  LatentPosterior p;
  p.mu_private = {1.0, -2.0};
  p.logvar_private = {0.0, 0.0};
  p.mu_shared = {0.5};
  p.logvar_shared = {0.0};
  CHECK(reparameterize(p, std::vector<double>{0, 0, 0}) == std::vector<double>{1.0, -2.0, 0.5});
  const auto z = reparameterize(p, std::vector<double>{0.3, 0.1, -0.2});
  CHECK(z[0] == doctest::Approx(1.3).epsilon(1e-15));
  CHECK(z[1] == doctest::Approx(-1.9).epsilon(1e-15));
  CHECK(z[2] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK_THROWS_AS(reparameterize(p, std::vector<double>{0, 0}), DimensionError);
}

TEST_CASE("reparameterize sample mean converges to mu (Monte Carlo, 1e5 draws)") {
  LatentPosterior p;
  p.mu_private = {0.7, -1.2};
  p.logvar_private = {std::log(0.25), std::log(4.0)};
  p.mu_shared = {2.0};
  p.logvar_shared = {0.0};
  const std::vector<double> mu = {0.7, -1.2, 2.0};
  const std::vector<double> sigma = {0.5, 2.0, 1.0};
  Rng rng(99);
  const std::size_t n = 100000;
  std::vector<double> acc(3, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> noise = {rng.normal(), rng.normal(), rng.normal()};
    const auto z = reparameterize(p, noise);
    for (std::size_t j = 0; j < 3; ++j) acc[j] += z[j];
  }
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(std::abs(acc[j] / n - mu[j]) < 3.0 * sigma[j] / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("decode shape contract and frozen determinism") {
  Rng rng(4);
  const auto gen = DualGenerator::create(small_gen(), rng);
  const std::vector<double> z = {0.1, 0.2, 0.3, 0.4, 0.5};
  const auto f = gen.anomaly().decode(z);
  CHECK(f.size() == 6);
  const FrozenReplayer frozen(gen);
  CHECK(frozen.pair(ClassTag::kAnomaly).decode(z) == f);
  CHECK(frozen.pair(ClassTag::kAnomaly).decode(z) == frozen.pair(ClassTag::kAnomaly).decode(z));
  CHECK_THROWS_AS(gen.normal().decode(std::vector<double>{1.0}), DimensionError);
}

TEST_CASE("overfitting one point: reconstruction error below 5% after 500 steps") {
  Rng rng(5);
  const auto gen = DualGenerator::create(small_gen(), rng);
  const std::vector<double> f = {1.0, -0.5, 2.0, 0.3, -1.5, 0.8};
  const GeneratorBatch batch{Tensor2::row(f), Tensor2(0, 6)};
  const ParamSet params = gen.normal().params();
  AdamState adam(params, AdamOptions{1e-2, 0.9, 0.999, 1e-8});
  for (int step = 0; step < 500; ++step) {
    Tape tape;
    auto terms = generator_loss(tape, gen, batch, nullptr, {}, GeneratorLossWeights{0.0, 0.0}, rng);
    tape.backward(terms.total);
    adam_step(params, tape.gradients(params), adam);
  }
  const auto post = gen.normal().encode(f);
  std::vector<double> mean_z = post.mu_private;
  mean_z.insert(mean_z.end(), post.mu_shared.begin(), post.mu_shared.end());
  const auto recon = gen.normal().decode(mean_z);
  double norm = 0.0;
  for (double v : f) norm += v * v;
  CHECK(sq_dist(recon, f) < 0.05 * norm);
}

TEST_CASE("kl_diag_gaussian values and non-negativity") {
  CHECK(kl_diag_gaussian(std::vector<double>{0, 0}, std::vector<double>{0, 0}) == 0.0);
  CHECK(kl_diag_gaussian(std::vector<double>{1, 0}, std::vector<double>{0, 0}) ==
        doctest::Approx(0.5).epsilon(1e-15));
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> mu(4), lv(4);
    for (auto& v : mu) v = 3.0 * rng.normal();
    for (auto& v : lv) v = 3.0 * rng.normal();
    CHECK(kl_diag_gaussian(mu, lv) > 0.0);
  }
}

TEST_CASE("sample_replay shapes") {
  Rng rng(7);
  GeneratorConfig c;
  c.feature_dim = 32;
  const FrozenReplayer frozen(DualGenerator::create(c, rng));
  const Tensor2 none = sample_replay(frozen, ClassTag::kNormal, 0, rng);
  CHECK(none.rows() == 0);
  const Tensor2 eight = sample_replay(frozen, ClassTag::kAnomaly, 8, rng);
  CHECK(eight.rows() == 8);
  CHECK(eight.cols() == 32);
}

TEST_CASE("replayed normals after domain 1 sit nearer the normal center than the anomaly center") {
  SyntheticStreamConfig sc;
  sc.domains = 1;
  const auto stream = make_synthetic_stream(sc);
  TrainConfig tc;
  tc.discriminator.hidden1 = 64;
  ModelState state = init_model_state(tc, sc.feature_dim);
  train_domain(state, stream[0], tc);
  REQUIRE(state.replayer.has_value());
  Rng rng(8);
  const Tensor2 samples = sample_replay(*state.replayer, ClassTag::kNormal, 2000, rng);
  std::vector<double> mean(sc.feature_dim, 0.0);
  for (std::size_t r = 0; r < samples.rows(); ++r) {
    for (std::size_t k = 0; k < sc.feature_dim; ++k) mean[k] += samples(r, k) / samples.rows();
  }
  const auto centers = synthetic_domain_centers(sc, 1);
  CHECK(sq_dist(mean, centers.normal) < sq_dist(mean, centers.anomaly));
}

TEST_CASE("generator_loss with t=1 has one ELBO group; empty replay changes nothing") {
  Rng init(9);
  const auto gen = DualGenerator::create(small_gen(), init);
  Rng data(10);
  const GeneratorBatch cur{data.normal_tensor(4, 6), data.normal_tensor(3, 6)};
  const GeneratorBatch empty{Tensor2(0, 6), Tensor2(0, 6)};
  const GeneratorBatch rep{data.normal_tensor(4, 6), data.normal_tensor(3, 6)};
  auto eval = [&](const GeneratorBatch* r) {
    Tape tape;
    Rng rng(11);
    auto t = generator_loss(tape, gen, cur, r, {}, GeneratorLossWeights{}, rng);
    return std::pair{t.total.value().item(), t.elbo_groups};
  };
  const auto [no_replay, groups1] = eval(nullptr);
  CHECK(groups1 == 1);
  const auto [with_empty, groups_empty] = eval(&empty);
  CHECK(with_empty == no_replay);
  const auto [with_replay, groups2] = eval(&rep);
  CHECK(groups2 == 2);
  CHECK(with_replay > no_replay);
}

TEST_CASE("posterior equal to prior with perfect reconstruction gives a zero loss") {
  Rng init(12);
  const auto gen = DualGenerator::create(small_gen(), init);
  const std::vector<double> f = {0.5, -1.0, 2.0, 0.0, 1.5, -0.25};
  for (const auto& p : gen.params()) p->mutable_value() = Tensor2(p->value().rows(), p->value().cols(), 0.0);
  for (const auto& p : gen.params()) {
    if (p->id().find("dec.out.bias") != std::string::npos) p->assign(Tensor2::row(f));
  }
  const GeneratorBatch batch{Tensor2::row(f), Tensor2::row(f)};
  Tape tape;
  Rng rng(13);
  auto t = generator_loss(tape, gen, batch, nullptr, {}, GeneratorLossWeights{0.0, 0.0}, rng);
  // Squared-error NLL floor is 0 (the Gaussian constant is dropped).
  CHECK(t.total.value().item() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("latent distance term") {
  CHECK(latent_distance(std::vector<double>(4, 1.0), std::vector<double>(4, 0.0)) == 0.0);
  const std::vector<double> same = {0.3, -0.7, 1.1, 2.0};
  CHECK(latent_distance(same, same) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("adversarial term falls as D_gan of reconstructions rises") {
  Rng init(14);
  const auto gen = DualGenerator::create(small_gen(), init);
  DiscriminatorConfig dc;
  dc.feature_dim = 6;
  dc.hidden1 = 8;
  dc.hidden2 = 4;
  Rng drng(15);
  auto discs = make_discriminators(3, dc, drng);
  Rng data(16);
  const GeneratorBatch cur{data.normal_tensor(4, 6), data.normal_tensor(3, 6)};
  auto adversarial = [&] {
    Tape tape;
    Rng rng(17);
    return generator_loss(tape, gen, cur, nullptr, discs, GeneratorLossWeights{1.0, 0.0}, rng)
        .adversarial;
  };
  double prev = adversarial();
  for (int i = 0; i < 4; ++i) {
    for (auto& d : discs) {
      for (const auto& p : d.params()) {
        if (p->id().find("gan") != std::string::npos && p->id().find("bias") != std::string::npos) {
          p->mutable_value()[0] += 0.5;
        }
      }
    }
    const double now = adversarial();
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("tied parameters receive the sum of both classes' gradients") {
  Rng init(18);
  const auto gen = DualGenerator::create(small_gen(), init);
  Rng data(19);
  const Tensor2 xn = data.normal_tensor(4, 6), xa = data.normal_tensor(3, 6);
  const GeneratorBatch empty_a{xn, Tensor2(0, 6)}, empty_n{Tensor2(0, 6), xa};
  const ParamSet params = gen.params();
  auto grads = [&](const GeneratorBatch& b, std::uint64_t seed_n, std::uint64_t seed_a) {
    // Separate rng streams per class keep the noise identical across calls.
    Tape tape;
    std::vector<Var> parts;
    if (b.normal.rows() > 0) {
      Rng r(seed_n);
      parts.push_back(generator_loss(tape, gen, GeneratorBatch{b.normal, Tensor2(0, 6)}, nullptr,
                                     {}, GeneratorLossWeights{0.0, 0.0}, r)
                          .total);
    }
    if (b.anomaly.rows() > 0) {
      Rng r(seed_a);
      parts.push_back(generator_loss(tape, gen, GeneratorBatch{Tensor2(0, 6), b.anomaly}, nullptr,
                                     {}, GeneratorLossWeights{0.0, 0.0}, r)
                          .total);
    }
    Var total = parts.size() == 1 ? parts[0] : add(parts[0], parts[1]);
    tape.backward(total);
    return tape.gradients(params);
  };
  const GradSet gn = grads(empty_a, 1, 2);
  const GradSet ga = grads(empty_n, 1, 2);
  const GradSet both = grads(GeneratorBatch{xn, xa}, 1, 2);
  for (const auto& p : gen.normal().shared_params()) {
    const Tensor2& s = both.at(p->id());
    double nonzero = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(s[i] == doctest::Approx(gn.at(p->id())[i] + ga.at(p->id())[i]).epsilon(1e-12));
      nonzero += std::abs(gn.at(p->id())[i]) * std::abs(ga.at(p->id())[i]);
    }
    CHECK(nonzero > 0.0);
  }
}

TEST_CASE("generator_loss gradients match finite differences through all three discriminators") {
  Rng init(20);
  const auto gen = DualGenerator::create(small_gen(), init);
  DiscriminatorConfig dc;
  dc.feature_dim = 6;
  dc.hidden1 = 7;
  dc.hidden2 = 4;
  Rng drng(21);
  const auto discs = make_discriminators(3, dc, drng);
  Rng data(22);
  const GeneratorBatch cur{data.normal_tensor(3, 6), data.normal_tensor(2, 6)};
  const GeneratorBatch rep{data.normal_tensor(2, 6), data.normal_tensor(2, 6)};
  ParamSet params = gen.params();
  for (const auto& d : discs) params.add_all(d.params());
  const auto r = check_gradients(params, [&](Tape& tape) {
    Rng rng(23);
    return generator_loss(tape, gen, cur, &rep, discs, GeneratorLossWeights{1.0, 0.1}, rng).total;
  });
  CAPTURE(r.worst);
  CHECK(r.max_rel_error < 1e-4);
}
