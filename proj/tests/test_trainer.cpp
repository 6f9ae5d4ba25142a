#include <cmath>
#include <string>

#include "cade/checkpoint.hpp"
#include "cade/error.hpp"
#include "cade/trainer.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cade;

namespace {

// Small, fast stream for protocol tests.
SyntheticStreamConfig tiny_stream(int domains = 3) {
  SyntheticStreamConfig s;
  s.domains = domains;
  s.feature_dim = 12;
  s.bags_per_domain = 12;
  s.test_bags_per_domain = 10;
  s.bag_size = 8;
  s.anomaly_bag_fraction = 0.5;
  return s;
}

TrainConfig tiny_train(Regime regime, std::uint64_t seed = 0) {
  TrainConfig c;
  c.regime = regime;
  c.epochs_per_domain = 2;
  c.seed = seed;
  c.generator.hidden = 16;
  c.generator.private_dim = 4;
  c.generator.shared_dim = 4;
  c.discriminator.hidden1 = 16;
  c.discriminator.hidden2 = 8;
  return c;
}

// Model sizes used for every run on the standard stream.
TrainConfig synthetic_train(Regime regime, std::uint64_t seed) {
  TrainConfig c;
  c.regime = regime;
  c.seed = seed;
  c.discriminator.hidden1 = 64;
  return c;
}

SyntheticStreamConfig seeded(SyntheticStreamConfig s, std::uint64_t seed) {
  s.seed += seed;
  return s;
}

std::vector<char> state_bytes(const ModelState& s, const AucMatrix& auc) {
  return encode_checkpoint("{}", s, auc);
}

}  // namespace

TEST_CASE("the first domain never samples replay; later domains do") {
  const auto stream = make_synthetic_stream(tiny_stream(2));
  const TrainConfig cfg = tiny_train(Regime::kCade);
  ModelState s = init_model_state(cfg, 12);
  CHECK_FALSE(s.replayer.has_value());
  train_domain(s, stream[0], cfg);
  CHECK(s.replay_sample_calls == 0);
  CHECK(s.t == 2);
  REQUIRE(s.replayer.has_value());
  train_domain(s, stream[1], cfg);
  CHECK(s.replay_sample_calls > 0);

  TrainConfig no_replay = cfg;
  no_replay.replay_ratio_neg = no_replay.replay_ratio_pos = 0.0;
  ModelState z = init_model_state(no_replay, 12);
  train_domain(z, stream[0], no_replay);
  CHECK(z.replay_sample_calls == 0);
  // Ratios only gate discriminator replay; the generators still rehearse
  // their own snapshot from domain 2 on.
  train_domain(z, stream[1], no_replay);
  CHECK(z.replay_sample_calls > 0);
}

TEST_CASE("invalid training configurations are rejected") {
  const auto stream = make_synthetic_stream(tiny_stream(1));
  TrainConfig cfg = tiny_train(Regime::kCade);
  cfg.epochs_per_domain = 0;
  CHECK_THROWS_AS(init_model_state(cfg, 12), ConfigError);
  CHECK_THROWS_AS(run_regime(stream, cfg), ConfigError);
  cfg = tiny_train(Regime::kCade);
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_train(Regime::kCade);
  cfg.replay_ratio_pos = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_train(Regime::kCade);
  cfg.discriminators = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(parse_regime("joint"), ConfigError);
  CHECK(parse_regime("vae_gr") == Regime::kVaeGr);

  ModelState s = init_model_state(tiny_train(Regime::kCade), 12);
  const auto two = make_synthetic_stream(tiny_stream(2));
  CHECK_THROWS_AS(train_domain(s, two[1], tiny_train(Regime::kCade)), ConfigError);
  CHECK_THROWS_AS(run_regime(std::span<const DomainDataset>{}, tiny_train(Regime::kFt)),
                  ConfigError);
}

TEST_CASE("regime architectures") {
  SUBCASE("cade") {
    const ModelState s = init_model_state(tiny_train(Regime::kCade), 12);
    CHECK(s.discriminators.size() == 3);
    REQUIRE(s.generators.has_value());
    CHECK(s.generators->normal().shared_params().size() > 0);
  }
  SUBCASE("ft") {
    const ModelState s = init_model_state(tiny_train(Regime::kFt), 12);
    CHECK(s.discriminators.size() == 1);
    CHECK_FALSE(s.generators.has_value());
  }
  SUBCASE("vae_gr") {
    const ModelState s = init_model_state(tiny_train(Regime::kVaeGr), 12);
    CHECK(s.discriminators.size() == 1);
    REQUIRE(s.generators.has_value());
    CHECK(s.generators->normal().shared_params().size() == 0);
  }
  SUBCASE("mtl") {
    const ModelState s = init_model_state(tiny_train(Regime::kMtl), 12);
    CHECK(s.discriminators.size() == 3);
    CHECK_FALSE(s.generators.has_value());
  }
}

TEST_CASE("after two separated domains cade keeps domain 1 better than ft") {
  SyntheticStreamConfig sc;
  sc.domains = 2;
  double cade = 0.0, ft = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto stream = make_synthetic_stream(seeded(sc, seed));
    cade += run_regime(stream, synthetic_train(Regime::kCade, seed)).auc.at(1, 0) / 3.0;
    ft += run_regime(stream, synthetic_train(Regime::kFt, seed)).auc.at(1, 0) / 3.0;
  }
  CAPTURE(cade);
  CAPTURE(ft);
  CHECK(cade > ft);
}

TEST_CASE("with one domain cade, ft and mtl reach comparable AUC") {
  SyntheticStreamConfig sc;
  sc.domains = 1;
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    const auto stream = make_synthetic_stream(seeded(sc, seed));
    const double ft = run_regime(stream, synthetic_train(Regime::kFt, seed)).auc.at(0, 0);
    const double cade = run_regime(stream, synthetic_train(Regime::kCade, seed)).auc.at(0, 0);
    const double mtl = run_regime(stream, synthetic_train(Regime::kMtl, seed)).auc.at(0, 0);
    CAPTURE(seed);
    CHECK(std::abs(cade - ft) < 0.1);
    CHECK(std::abs(mtl - ft) < 0.1);
  }
}

TEST_CASE("mtl average final AUC is at least ft on the standard stream") {
  const SyntheticStreamConfig sc;
  double mtl = 0.0, ft = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto stream = make_synthetic_stream(seeded(sc, seed));
    mtl += forgetting_metrics(run_regime(stream, synthetic_train(Regime::kMtl, seed)).auc)
               .avg_final_auc;
    ft += forgetting_metrics(run_regime(stream, synthetic_train(Regime::kFt, seed)).auc)
              .avg_final_auc;
  }
  CAPTURE(mtl / 3.0);
  CAPTURE(ft / 3.0);
  CHECK(mtl >= ft);
}

TEST_CASE("AUC rows are filled one domain at a time") {
  const auto stream = make_synthetic_stream(tiny_stream(3));
  std::vector<std::size_t> filled;
  RunOptions opts;
  opts.on_domain_end = [&](const ModelState& s, const AucMatrix& auc, std::span<const StepLog> logs) {
    filled.push_back(auc.filled_rows());
    CHECK(auc.row_filled(static_cast<std::size_t>(s.t - 2)));
    if (static_cast<std::size_t>(s.t - 1) < auc.domains()) {
      CHECK_FALSE(auc.row_filled(static_cast<std::size_t>(s.t - 1)));
    }
    REQUIRE_FALSE(logs.empty());
    for (const auto& l : logs) CHECK(l.domain == s.t - 1);
  };
  const auto res = run_regime(stream, tiny_train(Regime::kCade), opts);
  CHECK(filled == std::vector<std::size_t>{1, 2, 3});
  CHECK(res.auc.domains() == 3);
  CHECK(res.state.t == 4);
}

TEST_CASE("a generator snapshot is unaffected by later training") {
  const auto stream = make_synthetic_stream(tiny_stream(2));
  const TrainConfig cfg = tiny_train(Regime::kCade);
  ModelState s = init_model_state(cfg, 12);
  train_domain(s, stream[0], cfg);
  const FrozenReplayer snap = snapshot_generators(s);
  const FrozenReplayer twin = snapshot_generators(s);
  Rng z(5);
  const Tensor2 latent = z.normal_tensor(4, cfg.generator.latent_dim());
  const Tensor2 before = snap.pair(ClassTag::kNormal).decode(latent);
  train_domain(s, stream[1], cfg);
  CHECK(snap.pair(ClassTag::kNormal).decode(latent) == before);
  CHECK(s.generators->normal().decode(latent) != before);

  Rng a(9), b(9);
  CHECK(sample_replay(snap, ClassTag::kAnomaly, 5, a) == sample_replay(twin, ClassTag::kAnomaly, 5, b));
  CHECK_THROWS_AS(snapshot_generators(init_model_state(tiny_train(Regime::kFt), 12)), ConfigError);
}

TEST_CASE("sequential regimes never read past-domain training instances") {
  const auto stream = make_synthetic_stream(tiny_stream(3));
  for (Regime r : {Regime::kCade, Regime::kFt, Regime::kVaeGr}) {
    CAPTURE(to_string(r));
    AccessAudit audit;
    RunOptions opts;
    opts.audit = &audit;
    run_regime(stream, tiny_train(r), opts);
    CHECK(audit.past_domain_reads() == 0);
    CHECK(audit.total_reads() > 0);
    for (int t = 1; t <= 3; ++t) CHECK(audit.reads(t, t) > 0);
  }
}

TEST_CASE("identical configuration gives bitwise identical runs") {
  const auto stream = make_synthetic_stream(tiny_stream(3));
  for (Regime r : {Regime::kCade, Regime::kFt, Regime::kMtl, Regime::kVaeGr}) {
    CAPTURE(to_string(r));
    const auto a = run_regime(stream, tiny_train(r, 4));
    const auto b = run_regime(stream, tiny_train(r, 4));
    CHECK(a.auc == b.auc);
    CHECK(state_bytes(a.state, a.auc) == state_bytes(b.state, b.auc));
    const auto c = run_regime(stream, tiny_train(r, 5));
    CHECK(state_bytes(a.state, a.auc) != state_bytes(c.state, c.auc));
  }
}

TEST_CASE("cade with every extra term disabled follows the ft trajectory") {
  const auto stream = make_synthetic_stream(tiny_stream(3));
  TrainConfig reduced = tiny_train(Regime::kCade, 2);
  reduced.discriminators = 1;
  reduced.lambda1 = reduced.lambda2 = reduced.lambda3 = reduced.lambda4 = 0.0;
  reduced.replay_ratio_neg = reduced.replay_ratio_pos = 0.0;
  TrainConfig ft = tiny_train(Regime::kFt, 2);
  ft.replay_ratio_neg = ft.replay_ratio_pos = 0.0;
  ModelState a = init_model_state(reduced, 12), b = init_model_state(ft, 12);
  for (const auto& d : stream) {
    train_domain(a, d, reduced);
    train_domain(b, d, ft);
    const ParamSet pa = a.discriminator_params(), pb = b.discriminator_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa.entries()[i]->id() == pb.entries()[i]->id());
      CHECK(pa.entries()[i]->value() == pb.entries()[i]->value());
    }
  }
  CHECK(run_regime(stream, reduced).auc == run_regime(stream, ft).auc);
}

TEST_CASE("divergence aborts with the step, the domain and the last finite losses") {
  const auto stream = make_synthetic_stream(tiny_stream(1));
  TrainConfig cfg = tiny_train(Regime::kCade);
  cfg.lr = 1e200;
  try {
    run_regime(stream, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CAPTURE(msg);
    CHECK(msg.find("at step") != std::string::npos);
    CHECK(msg.find("of domain 1") != std::string::npos);
    CHECK(msg.find("last finite step") != std::string::npos);
    CHECK(msg.find("mil=") != std::string::npos);
  }
}

TEST_CASE("checkpoint encoding round-trips the full state") {
  const auto stream = make_synthetic_stream(tiny_stream(2));
  for (Regime r : {Regime::kCade, Regime::kFt, Regime::kVaeGr}) {
    CAPTURE(to_string(r));
    const TrainConfig cfg = tiny_train(r, 3);
    RunOptions opts;
    opts.stop_after_domain = 1;
    const auto part = run_regime(stream, cfg, opts);
    const auto bytes = encode_checkpoint("{\"k\":1}", part.state, part.auc);
    const Checkpoint ck = decode_checkpoint(bytes, cfg, 12);
    CHECK(ck.config_json == "{\"k\":1}");
    CHECK(ck.auc == part.auc);
    CHECK(ck.state.t == 2);
    CHECK(ck.state.data_rng == part.state.data_rng);
    CHECK(ck.state.gen_rng == part.state.gen_rng);
    CHECK(encode_checkpoint("{\"k\":1}", ck.state, ck.auc) == bytes);
  }
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run bit for bit") {
  const auto stream = make_synthetic_stream(tiny_stream(3));
  cade::testing::TempDir dir("resume");
  for (Regime r : {Regime::kCade, Regime::kFt, Regime::kVaeGr}) {
    CAPTURE(to_string(r));
    const TrainConfig cfg = tiny_train(r, 6);
    const auto full = run_regime(stream, cfg);
    RunOptions stop;
    stop.stop_after_domain = 2;
    const auto half = run_regime(stream, cfg, stop);
    CHECK(half.auc.filled_rows() == 2);
    const auto path = dir.path() / (std::string(to_string(r)) + ".ckpt");
    save_checkpoint(path, "{}", half.state, half.auc);
    Checkpoint ck = load_checkpoint(path, cfg, 12);
    const auto rest = resume_regime(stream, cfg, std::move(ck.state), std::move(ck.auc));
    CHECK(rest.auc == full.auc);
    CHECK(state_bytes(rest.state, rest.auc) == state_bytes(full.state, full.auc));
    std::vector<StepLog> joined = half.logs;
    joined.insert(joined.end(), rest.logs.begin(), rest.logs.end());
    REQUIRE(joined.size() == full.logs.size());
    for (std::size_t i = 0; i < joined.size(); ++i) {
      const StepLog &x = joined[i], &y = full.logs[i];
      CHECK(x.step == y.step);
      CHECK(x.domain == y.domain);
      CHECK(x.mil == y.mil);
      CHECK(x.gan_d == y.gan_d);
      CHECK(x.diver == y.diver);
      CHECK(x.elbo == y.elbo);
      CHECK(x.adversarial == y.adversarial);
      CHECK(x.distance == y.distance);
    }
  }
}

TEST_CASE("malformed checkpoints are rejected with FormatError") {
  const auto stream = make_synthetic_stream(tiny_stream(1));
  const TrainConfig cfg = tiny_train(Regime::kCade);
  const auto res = run_regime(stream, cfg);
  const auto bytes = encode_checkpoint("{}", res.state, res.auc);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic, cfg, 12), FormatError);
  const std::vector<char> truncated(bytes.begin(), bytes.begin() + bytes.size() / 2);
  CHECK_THROWS_AS(decode_checkpoint(truncated, cfg, 12), FormatError);
  auto trailing = bytes;
  trailing.push_back('\0');
  CHECK_THROWS_AS(decode_checkpoint(trailing, cfg, 12), FormatError);

  TrainConfig other = cfg;
  other.discriminator.hidden1 = 15;
  CHECK_THROWS_AS(decode_checkpoint(bytes, other, 12), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes, tiny_train(Regime::kFt), 12), FormatError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt", cfg, 12), IoError);
}
