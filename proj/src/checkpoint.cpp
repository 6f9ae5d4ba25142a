#include "cade/checkpoint.hpp"

#include <set>

#include "binary_io.hpp"
#include "cade/error.hpp"

namespace cade {

namespace {

constexpr char kMagic[4] = {'C', 'A', 'D', 'K'};

void put_tensor(detail::ByteWriter& w, const Tensor2& t) {
  w.put<std::uint64_t>(t.rows());
  w.put<std::uint64_t>(t.cols());
  for (double v : t.values()) w.put<double>(v);
}

Tensor2 get_tensor(detail::ByteReader& r) {
  const auto rows = r.get<std::uint64_t>();
  const auto cols = r.get<std::uint64_t>();
  if (cols != 0 && rows > r.remaining() / 8 / cols) r.fail("tensor larger than remaining payload");
  Tensor2 t(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = r.get<double>();
  return t;
}

void put_params(detail::ByteWriter& w, const ParamSet& params) {
  w.put<std::uint64_t>(params.size());
  for (const auto& p : params) {
    w.put_string(p->id());
    put_tensor(w, p->value());
  }
}

void get_params(detail::ByteReader& r, const ParamSet& params, const char* what) {
  const auto n = r.get<std::uint64_t>();
  if (n != params.size()) {
    r.fail(std::string(what) + ": " + std::to_string(n) + " stored parameters, model has " +
           std::to_string(params.size()));
  }
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string id = r.get_string();
    if (!params.contains(id)) r.fail(std::string(what) + ": unknown parameter " + id);
    if (!seen.insert(id).second) r.fail(std::string(what) + ": duplicate parameter " + id);
    Tensor2 v = get_tensor(r);
    const auto& p = params.get(id);
    if (!v.same_shape(p->value())) {
      r.fail(std::string(what) + ": parameter " + id + " has shape " + v.shape_string() +
             ", model expects " + p->value().shape_string());
    }
    p->assign(v);
  }
}

void put_moments(detail::ByteWriter& w, const std::map<std::string, Tensor2>& m) {
  w.put<std::uint64_t>(m.size());
  for (const auto& [id, t] : m) {
    w.put_string(id);
    put_tensor(w, t);
  }
}

std::map<std::string, Tensor2> get_moments(detail::ByteReader& r) {
  std::map<std::string, Tensor2> m;
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string id = r.get_string();
    Tensor2 t = get_tensor(r);
    if (!m.emplace(std::move(id), std::move(t)).second) r.fail("duplicate optimizer moment");
  }
  return m;
}

void put_adam(detail::ByteWriter& w, const AdamState& a) {
  w.put<double>(a.options.lr);
  w.put<double>(a.options.beta1);
  w.put<double>(a.options.beta2);
  w.put<double>(a.options.eps);
  w.put<std::uint64_t>(a.step);
  put_moments(w, a.first_moment);
  put_moments(w, a.second_moment);
}

AdamState get_adam(detail::ByteReader& r) {
  AdamOptions o;
  o.lr = r.get<double>();
  o.beta1 = r.get<double>();
  o.beta2 = r.get<double>();
  o.eps = r.get<double>();
  AdamState a(o);
  a.step = r.get<std::uint64_t>();
  a.first_moment = get_moments(r);
  a.second_moment = get_moments(r);
  return a;
}

}  // namespace

std::vector<char> encode_checkpoint(const std::string& config_json, const ModelState& state,
                                    const AucMatrix& auc) {
  detail::ByteWriter w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put_string(config_json);
  const std::size_t k = state.discriminators.empty() ? 0 : state.discriminators.front().feature_dim();
  w.put<std::uint64_t>(k);
  w.put<std::int32_t>(state.t);
  w.put<std::uint64_t>(state.global_step);
  w.put<std::uint64_t>(state.replay_sample_calls);
  w.put_string(state.data_rng.serialize());
  w.put_string(state.gen_rng.serialize());

  put_params(w, state.discriminator_params());
  w.put<std::uint8_t>(state.generators ? 1 : 0);
  if (state.generators) put_params(w, state.generators->params());
  w.put<std::uint8_t>(state.replayer ? 1 : 0);
  if (state.replayer) put_params(w, state.replayer->generators().params());
  put_adam(w, state.discriminator_adam);
  put_adam(w, state.generator_adam);

  w.put<std::uint64_t>(auc.domains());
  for (std::size_t r = 0; r < auc.domains(); ++r) {
    w.put<std::uint8_t>(auc.row_filled(r) ? 1 : 0);
    if (!auc.row_filled(r)) continue;
    for (double v : auc.row(r)) w.put<double>(v);
    w.put<double>(auc.pooled_seen(r));
    w.put<double>(auc.pooled_all(r));
  }
  return w.bytes();
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes, const TrainConfig& cfg,
                             std::size_t feature_dim, const std::string& source) {
  detail::ByteReader r(bytes, source);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::string(magic, 4) != std::string(kMagic, 4)) r.fail("bad checkpoint magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck{r.get_string(), init_model_state(cfg, feature_dim), AucMatrix()};
  const auto k = r.get<std::uint64_t>();
  if (k != feature_dim) {
    r.fail("checkpoint feature dim " + std::to_string(k) + " differs from data K=" +
           std::to_string(feature_dim));
  }
  ModelState& s = ck.state;
  s.t = r.get<std::int32_t>();
  if (s.t < 1) r.fail("invalid domain index");
  s.global_step = r.get<std::uint64_t>();
  s.replay_sample_calls = r.get<std::uint64_t>();
  try {
    s.data_rng = Rng::deserialize(r.get_string());
    s.gen_rng = Rng::deserialize(r.get_string());
  } catch (const FormatError& e) {
    r.fail(e.what());
  }

  get_params(r, s.discriminator_params(), "discriminators");
  const bool has_gen = r.get<std::uint8_t>() != 0;
  if (has_gen != s.generators.has_value()) r.fail("generator presence differs from config");
  if (has_gen) get_params(r, s.generators->params(), "generators");
  const bool has_replayer = r.get<std::uint8_t>() != 0;
  if (has_replayer) {
    if (!has_gen) r.fail("replayer stored without generators");
    DualGenerator frozen = s.generators->clone();
    get_params(r, frozen.params(), "replayer");
    s.replayer.emplace(frozen);
  }
  s.discriminator_adam = get_adam(r);
  s.generator_adam = get_adam(r);

  const auto domains = r.get<std::uint64_t>();
  if (domains > r.remaining()) r.fail("implausible domain count");
  ck.auc = AucMatrix(static_cast<std::size_t>(domains));
  for (std::size_t row = 0; row < domains; ++row) {
    if (r.get<std::uint8_t>() == 0) continue;
    std::vector<double> values(static_cast<std::size_t>(domains));
    for (auto& v : values) v = r.get<double>();
    const double seen = r.get<double>();
    const double all = r.get<double>();
    ck.auc.set_row(row, std::move(values), seen, all);
  }
  if (r.remaining() != 0) r.fail("trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                     const ModelState& state, const AucMatrix& auc) {
  detail::write_file_bytes(path, encode_checkpoint(config_json, state, auc));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg,
                           std::size_t feature_dim) {
  return decode_checkpoint(detail::read_file_bytes(path), cfg, feature_dim, path.string());
}

}  // namespace cade
