#include "cade/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "cade/checkpoint.hpp"
#include "cade/error.hpp"
#include "json.hpp"

namespace cade {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kReplayRatio: return "replay_ratio";
    case SweepAxis::kDomains: return "domains";
  }
  return "?";
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "replay_ratio") return SweepAxis::kReplayRatio;
  if (name == "domains") return SweepAxis::kDomains;
  throw ConfigError("unknown sweep axis \"" + name + "\" (expected replay_ratio or domains)");
}

double parse_fraction(const std::string& text) {
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || !std::isfinite(v)) {
      throw ConfigError("not a number or fraction: \"" + text + "\"");
    }
    return v;
  };
  const auto slash = text.find('/');
  if (slash == std::string::npos) return number(text);
  const double den = number(text.substr(slash + 1));
  if (den == 0.0) throw ConfigError("zero denominator in \"" + text + "\"");
  return number(text.substr(0, slash)) / den;
}

namespace {

// Reads keys of one JSON object with type checks and rejects unknown keys.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  const json* find(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  void read(const char* key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) fail(key, "a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const char* key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      const auto x = v->get<std::int64_t>();
      if (x < -1000000 || x > 1000000) fail(key, "an integer of sensible magnitude");
      out = static_cast<int>(x);
    }
  }
  // Numbers or fraction strings such as "2/3".
  void read(const char* key, double& out) {
    if (const json* v = find(key)) out = as_real(*v, key);
  }
  void read(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      out = v->get<bool>();
    }
  }
  void read(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }

  double as_real(const json& v, const std::string& key) const {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) return parse_fraction(v.get<std::string>());
    fail(key, "a number or fraction string");
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (used_.count(key) == 0) throw ConfigError(where_ + ": unknown key \"" + key + "\"");
    }
  }

  [[noreturn]] void fail(const std::string& key, const char* expected) const {
    throw ConfigError(where_ + "." + key + ": expected " + expected);
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

SyntheticStreamConfig read_synthetic(const json& j) {
  SyntheticStreamConfig c;
  ObjectReader r(j, "synthetic");
  r.read("domains", c.domains);
  r.read("feature_dim", c.feature_dim);
  r.read("bags_per_domain", c.bags_per_domain);
  r.read("test_bags_per_domain", c.test_bags_per_domain);
  r.read("bag_size", c.bag_size);
  r.read("anomaly_bag_fraction", c.anomaly_bag_fraction);
  r.read("anomaly_instance_fraction", c.anomaly_instance_fraction);
  r.read("domain_shift_scale", c.domain_shift_scale);
  r.read("class_separation", c.class_separation);
  r.read("noise_scale", c.noise_scale);
  r.read("anomaly_noise_scale", c.anomaly_noise_scale);
  r.read("anomaly_interference", c.anomaly_interference);
  r.read("segment_len", c.segment_len);
  r.read("seed", c.seed);
  r.finish();
  return c;
}

json write_synthetic(const SyntheticStreamConfig& c) {
  return {{"domains", c.domains},
          {"feature_dim", c.feature_dim},
          {"bags_per_domain", c.bags_per_domain},
          {"test_bags_per_domain", c.test_bags_per_domain},
          {"bag_size", c.bag_size},
          {"anomaly_bag_fraction", c.anomaly_bag_fraction},
          {"anomaly_instance_fraction", c.anomaly_instance_fraction},
          {"domain_shift_scale", c.domain_shift_scale},
          {"class_separation", c.class_separation},
          {"noise_scale", c.noise_scale},
          {"anomaly_noise_scale", c.anomaly_noise_scale},
          {"anomaly_interference", c.anomaly_interference},
          {"segment_len", c.segment_len},
          {"seed", c.seed}};
}

TrainConfig read_train(const json& j) {
  TrainConfig c;
  ObjectReader r(j, "train");
  std::string regime = to_string(c.regime);
  r.read("regime", regime);
  c.regime = parse_regime(regime);
  r.read("epochs_per_domain", c.epochs_per_domain);
  r.read("batch_bags", c.batch_bags);
  r.read("steps_per_epoch", c.steps_per_epoch);
  r.read("lr", c.lr);
  r.read("replay_ratio_neg", c.replay_ratio_neg);
  r.read("replay_ratio_pos", c.replay_ratio_pos);
  r.read("lambda1", c.lambda1);
  r.read("lambda2", c.lambda2);
  r.read("lambda3", c.lambda3);
  r.read("lambda4", c.lambda4);
  r.read("discriminators", c.discriminators);
  if (const json* g = r.find("generator")) {
    ObjectReader gr(*g, r.path("generator"));
    gr.read("hidden", c.generator.hidden);
    gr.read("private_dim", c.generator.private_dim);
    gr.read("shared_dim", c.generator.shared_dim);
    gr.read("tie_shared", c.generator.tie_shared);
    gr.finish();
  }
  if (const json* d = r.find("discriminator")) {
    ObjectReader dr(*d, r.path("discriminator"));
    dr.read("hidden1", c.discriminator.hidden1);
    dr.read("hidden2", c.discriminator.hidden2);
    dr.finish();
  }
  r.finish();
  return c;
}

json write_train(const TrainConfig& c) {
  return {{"regime", to_string(c.regime)},
          {"epochs_per_domain", c.epochs_per_domain},
          {"batch_bags", c.batch_bags},
          {"steps_per_epoch", c.steps_per_epoch},
          {"lr", c.lr},
          {"replay_ratio_neg", c.replay_ratio_neg},
          {"replay_ratio_pos", c.replay_ratio_pos},
          {"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"lambda3", c.lambda3},
          {"lambda4", c.lambda4},
          {"discriminators", c.discriminators},
          {"generator",
           {{"hidden", c.generator.hidden},
            {"private_dim", c.generator.private_dim},
            {"shared_dim", c.generator.shared_dim},
            {"tie_shared", c.generator.tie_shared}}},
          {"discriminator",
           {{"hidden1", c.discriminator.hidden1}, {"hidden2", c.discriminator.hidden2}}}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

bool non_empty_dir(const fs::path& dir) {
  std::error_code ec;
  return fs::is_directory(dir, ec) && !fs::is_empty(dir, ec);
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

std::string fmt4(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4) << v;
  return ss.str();
}

fs::path seed_dir(const fs::path& run_dir, std::uint64_t seed) {
  return run_dir / ("seed_" + std::to_string(seed));
}

fs::path checkpoint_path(const fs::path& dir, int domain) {
  return dir / ("domain_" + std::to_string(domain) + ".ckpt");
}

// Newest domain_<t>.ckpt in `dir`, if any.
std::optional<std::pair<int, fs::path>> newest_checkpoint(const fs::path& dir) {
  std::optional<std::pair<int, fs::path>> best;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    constexpr std::string_view prefix = "domain_", suffix = ".ckpt";
    if (name.size() <= prefix.size() + suffix.size() || !name.starts_with(prefix) ||
        !name.ends_with(suffix)) {
      continue;
    }
    const std::string digits =
        name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
    if (!std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      continue;
    }
    const int t = std::stoi(digits);
    if (!best || t > best->first) best.emplace(t, entry.path());
  }
  return best;
}

TrainConfig seed_train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  return tc;
}

std::string seed_echo(const std::string& config_json, std::uint64_t seed) {
  return json{{"experiment", json::parse(config_json)}, {"seed", seed}}.dump();
}

// Runs job(i) for i in [0, n) on up to `jobs` threads; rethrows the first
// failure in index order.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(n);
  const unsigned workers = static_cast<unsigned>(
      std::min<std::size_t>(std::max(1u, jobs), std::max<std::size_t>(n, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            job(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

json summary_json(const ForgettingSummary& s, const AucMatrix& auc) {
  json rows = json::array(), seen = json::array(), all = json::array();
  for (std::size_t r = 0; r < auc.domains(); ++r) {
    rows.push_back(auc.row(r));
    seen.push_back(auc.pooled_seen(r));
    all.push_back(auc.pooled_all(r));
  }
  return {{"final_auc", s.final_auc}, {"avg_final_auc", s.avg_final_auc}, {"bwt", s.bwt},
          {"pooled_seen", seen},      {"pooled_all", all},                 {"auc_matrix", rows}};
}

json mean_std_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

// Keeps log lines of domains <= `completed`; mtl logs (domain=0) always survive.
void truncate_losses(const fs::path& path, int completed) {
  std::error_code ec;
  if (!fs::exists(path, ec)) return;
  std::istringstream in(read_text(path));
  std::string out, line;
  while (std::getline(in, line)) {
    const auto pos = line.find(" domain=");
    if (pos == std::string::npos) continue;
    const int d = std::atoi(line.c_str() + pos + 8);
    if (d <= completed) out += line + "\n";
  }
  write_text(path, out);
}

void append_losses(const fs::path& path, std::span<const StepLog> logs) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  for (const auto& l : logs) out << format_step_log(l) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

struct RunArtifacts {
  ExperimentConfig cfg;
  std::string config_json;
};

RunArtifacts read_run(const fs::path& run_dir) {
  const fs::path p = run_dir / "config.json";
  std::error_code ec;
  if (!fs::exists(p, ec)) throw IoError("missing run artifact " + p.string());
  RunArtifacts a{parse_experiment_config(read_text(p)), {}};
  a.config_json = experiment_config_json(a.cfg);
  return a;
}

Checkpoint load_newest(const fs::path& dir, const ExperimentConfig& cfg,
                       const std::string& config_json, std::uint64_t seed, std::size_t k) {
  auto newest = newest_checkpoint(dir);
  if (!newest) throw IoError("no checkpoint in " + dir.string());
  Checkpoint ck = load_checkpoint(newest->second, seed_train_config(cfg, seed), k);
  if (ck.config_json != seed_echo(config_json, seed)) {
    throw ConfigError(newest->second.string() + " was written by a different configuration");
  }
  return ck;
}

std::vector<DomainDataset> load_data_prefix(const ExperimentConfig& cfg, std::uint64_t seed,
                                            std::optional<std::size_t> domains) {
  if (domains && cfg.synthetic) {
    ExperimentConfig c = cfg;
    c.synthetic->domains = static_cast<int>(*domains);
    return load_experiment_data(c, seed);
  }
  auto data = load_experiment_data(cfg, seed);
  if (domains) {
    if (*domains > data.size()) {
      throw ConfigError("sweep asks for " + std::to_string(*domains) + " domains, data has " +
                        std::to_string(data.size()));
    }
    data.resize(*domains);
  }
  return data;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (synthetic.has_value() == manifest.has_value()) {
    throw ConfigError("config needs exactly one data source: synthetic or manifest");
  }
  if (synthetic) synthetic->validate();
  if (seeds.empty()) throw ConfigError("seeds must be non-empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  TrainConfig t = train;
  t.generator.feature_dim = t.discriminator.feature_dim;
  t.validate();
  if (out_dir.empty()) throw ConfigError("out must be non-empty");
  if (sweep_axis == SweepAxis::kDomains) {
    for (double v : sweep_values) {
      if (!(v >= 1.0) || v != std::floor(v)) {
        throw ConfigError("domains sweep values must be positive integers");
      }
    }
  }
}

ExperimentConfig parse_experiment_config(const std::string& json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  try {
    ObjectReader r(j, "config");
    const json* syn = r.find("synthetic");
    const json* man = r.find("manifest");
    if (syn != nullptr && man != nullptr) {
      throw ConfigError("config needs exactly one data source, got synthetic and manifest");
    }
    if (syn != nullptr) c.synthetic = read_synthetic(*syn);
    if (man != nullptr) {
      if (!man->is_string()) r.fail("manifest", "a path string");
      fs::path p = man->get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      c.manifest = p;
      c.synthetic.reset();
    }
    r.read("resample_data_per_seed", c.resample_data_per_seed);
    if (const json* t = r.find("train")) c.train = read_train(*t);
    std::string out = c.out_dir.string();
    r.read("out", out);
    c.out_dir = out;
    if (const json* s = r.find("seeds")) {
      if (!s->is_array()) r.fail("seeds", "an array of non-negative integers");
      c.seeds.clear();
      for (const auto& v : *s) {
        if (!v.is_number_unsigned()) r.fail("seeds", "an array of non-negative integers");
        c.seeds.push_back(v.get<std::uint64_t>());
      }
    }
    if (const json* sw = r.find("sweep")) {
      ObjectReader sr(*sw, "config.sweep");
      std::string axis;
      sr.read("axis", axis);
      if (!axis.empty()) c.sweep_axis = parse_sweep_axis(axis);
      if (const json* vals = sr.find("values")) {
        if (!vals->is_array()) sr.fail("values", "an array");
        for (const auto& v : *vals) c.sweep_values.push_back(sr.as_real(v, "values"));
      }
      sr.finish();
    }
    r.finish();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) throw ConfigError("config file not found: " + path.string());
  return parse_experiment_config(read_text(path), path.parent_path());
}

std::string experiment_config_json(const ExperimentConfig& c) {
  json j;
  if (c.synthetic) j["synthetic"] = write_synthetic(*c.synthetic);
  if (c.manifest) j["manifest"] = c.manifest->string();
  j["resample_data_per_seed"] = c.resample_data_per_seed;
  j["train"] = write_train(c.train);
  j["out"] = c.out_dir.string();
  j["seeds"] = c.seeds;
  if (c.sweep_axis || !c.sweep_values.empty()) {
    json sw;
    if (c.sweep_axis) sw["axis"] = to_string(*c.sweep_axis);
    sw["values"] = c.sweep_values;
    j["sweep"] = sw;
  }
  return j.dump(2) + "\n";
}

std::vector<DomainDataset> load_experiment_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.synthetic) {
    SyntheticStreamConfig s = *cfg.synthetic;
    if (cfg.resample_data_per_seed) s.seed += seed;
    return make_synthetic_stream(s);
  }
  if (!cfg.manifest) throw ConfigError("config has no data source");
  return load_feature_dataset(*cfg.manifest);
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd m;
  if (values.empty()) return m;
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

std::string auc_matrix_csv(const AucMatrix& auc) {
  std::string out = "after_domain";
  for (std::size_t d = 0; d < auc.domains(); ++d) out += ",d" + std::to_string(d + 1);
  out += ",pooled_seen,pooled_all\n";
  for (std::size_t r = 0; r < auc.domains(); ++r) {
    if (!auc.row_filled(r)) continue;
    out += std::to_string(r + 1);
    for (double v : auc.row(r)) out += "," + fmt(v);
    out += "," + fmt(auc.pooled_seen(r)) + "," + fmt(auc.pooled_all(r)) + "\n";
  }
  return out;
}

fs::path cmd_gen_data(const ExperimentConfig& cfg, const fs::path& out_dir, std::uint64_t seed,
                      bool force) {
  cfg.validate();
  if (!cfg.synthetic) throw ConfigError("gen-data needs a synthetic data source");
  std::error_code ec;
  if (fs::exists(out_dir / "manifest.json", ec) && !force) {
    throw ConfigError("refusing to overwrite " + (out_dir / "manifest.json").string() +
                      " (use --force)");
  }
  return save_feature_dataset(load_experiment_data(cfg, seed), out_dir);
}

namespace {

// Clears a previous run's artifacts; anything else in the directory stays.
void clear_run_artifacts(const fs::path& run_dir) {
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name == "config.json" || name == "summary.json" || name.starts_with("seed_")) {
      fs::remove_all(entry.path());
    }
  }
}

}  // namespace

TrainOutcome cmd_train(const ExperimentConfig& cfg, const TrainCommandOptions& opts) {
  cfg.validate();
  if (opts.stop_after_domain && *opts.stop_after_domain < 1) {
    throw ConfigError("stop-after must be >= 1");
  }
  const fs::path run_dir = cfg.out_dir;
  const std::string config_json = experiment_config_json(cfg);
  if (opts.resume) {
    const fs::path p = run_dir / "config.json";
    std::error_code ec;
    if (!fs::exists(p, ec)) throw IoError("nothing to resume: " + p.string() + " is missing");
    if (experiment_config_json(parse_experiment_config(read_text(p))) != config_json) {
      throw ConfigError("config differs from the run being resumed in " + run_dir.string());
    }
  } else {
    if (non_empty_dir(run_dir)) {
      if (!opts.force) {
        throw ConfigError("refusing to overwrite " + run_dir.string() + " (use --force or --resume)");
      }
      clear_run_artifacts(run_dir);
    }
    make_dirs(run_dir);
    write_text(run_dir / "config.json", config_json);
  }

  TrainOutcome outcome{run_dir, std::vector<SeedOutcome>(cfg.seeds.size())};
  parallel_for(cfg.seeds.size(), opts.jobs, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const fs::path dir = seed_dir(run_dir, seed);
    const auto data = load_experiment_data(cfg, seed);
    if (data.empty()) throw ConfigError("data has no domains");
    const std::size_t k = data.front().feature_dim();
    const TrainConfig tc = seed_train_config(cfg, seed);
    const std::string echo = seed_echo(config_json, seed);
    const int total = static_cast<int>(data.size());
    const fs::path losses = dir / "losses.log";

    std::optional<Checkpoint> ck;
    if (opts.resume && newest_checkpoint(dir)) ck = load_newest(dir, cfg, config_json, seed, k);
    make_dirs(dir);
    if (ck) {
      truncate_losses(losses, ck->state.t - 1);
    } else {
      write_text(losses, "");
    }

    RunOptions ro;
    ro.stop_after_domain = opts.stop_after_domain;
    ro.on_domain_end = [&](const ModelState& s, const AucMatrix& auc, std::span<const StepLog> logs) {
      append_losses(losses, logs);
      save_checkpoint(checkpoint_path(dir, s.t - 1), echo, s, auc);
    };
    AucMatrix auc;
    if (ck && ck->state.t > total) {
      auc = std::move(ck->auc);
    } else if (ck) {
      auc = resume_regime(data, tc, std::move(ck->state), std::move(ck->auc), ro).auc;
    } else {
      auc = run_regime(data, tc, ro).auc;
    }
    write_text(dir / "auc_matrix.csv", auc_matrix_csv(auc));
    SeedOutcome& so = outcome.seeds[i];
    so.seed = seed;
    so.complete = auc.filled_rows() == auc.domains();
    if (so.complete) {
      json j = summary_json(forgetting_metrics(auc), auc);
      j["seed"] = seed;
      j["regime"] = to_string(cfg.train.regime);
      write_text(dir / "summary.json", j.dump(2) + "\n");
    }
    so.auc = std::move(auc);
  });

  const bool complete = std::all_of(outcome.seeds.begin(), outcome.seeds.end(),
                                    [](const SeedOutcome& s) { return s.complete; });
  std::ostream* rep = opts.report;
  if (!complete) {
    if (rep != nullptr) {
      *rep << "stopped early; resume with --resume to finish " << run_dir.string() << "\n";
    }
    return outcome;
  }
  std::vector<double> finals, avgs, bwts;
  std::vector<std::vector<double>> seen_rows;
  json per_seed = json::array();
  for (const auto& so : outcome.seeds) {
    const auto s = forgetting_metrics(so.auc);
    finals.push_back(s.final_auc);
    avgs.push_back(s.avg_final_auc);
    bwts.push_back(s.bwt);
    per_seed.push_back({{"seed", so.seed}, {"final_auc", s.final_auc}});
    if (rep != nullptr) {
      *rep << "seed " << so.seed << ": final AUC " << fmt4(s.final_auc) << ", mean last row "
           << fmt4(s.avg_final_auc) << ", BWT " << fmt4(s.bwt) << "\n";
    }
  }
  const std::size_t domains = outcome.seeds.front().auc.domains();
  json seen_mean = json::array(), seen_std = json::array();
  for (std::size_t r = 0; r < domains; ++r) {
    std::vector<double> col;
    for (const auto& so : outcome.seeds) col.push_back(so.auc.pooled_seen(r));
    const auto m = mean_std(col);
    seen_mean.push_back(m.mean);
    seen_std.push_back(m.std);
  }
  const MeanStd f = mean_std(finals), a = mean_std(avgs), b = mean_std(bwts);
  json summary{{"regime", to_string(cfg.train.regime)},
               {"seeds", cfg.seeds},
               {"domains", domains},
               {"final_auc", mean_std_json(f)},
               {"avg_final_auc", mean_std_json(a)},
               {"bwt", mean_std_json(b)},
               {"pooled_seen", {{"mean", seen_mean}, {"std", seen_std}}},
               {"per_seed", per_seed}};
  write_text(run_dir / "summary.json", summary.dump(2) + "\n");
  if (rep != nullptr) {
    *rep << to_string(cfg.train.regime) << " over " << cfg.seeds.size() << " seed(s): final AUC "
         << fmt4(f.mean) << " +- " << fmt4(f.std) << ", BWT " << fmt4(b.mean) << " +- "
         << fmt4(b.std) << "\n";
  }
  return outcome;
}

std::vector<DomainEvaluation> cmd_eval(const fs::path& run_dir,
                                       const std::optional<ExperimentConfig>& data_cfg,
                                       std::ostream* report) {
  const RunArtifacts run = read_run(run_dir);
  std::vector<DomainEvaluation> out;
  for (std::uint64_t seed : run.cfg.seeds) {
    const auto data = load_experiment_data(data_cfg ? *data_cfg : run.cfg, seed);
    if (data.empty()) throw ConfigError("data has no domains");
    const fs::path dir = seed_dir(run_dir, seed);
    Checkpoint ck = load_newest(dir, run.cfg, run.config_json, seed, data.front().feature_dim());
    const std::size_t seen = std::min<std::size_t>(static_cast<std::size_t>(ck.state.t - 1),
                                                   data.size());
    auto ev = evaluate_domains(ck.state.discriminators, data, seen);
    json j{{"seed", seed},
           {"trained_domains", ck.state.t - 1},
           {"per_domain", ev.per_domain},
           {"pooled_seen", ev.pooled_seen},
           {"pooled_all", ev.pooled_all}};
    write_text(dir / "eval.json", j.dump(2) + "\n");
    if (report != nullptr) {
      *report << "seed " << seed << ": pooled AUC over seen domains " << fmt4(ev.pooled_seen)
              << ", over all domains " << fmt4(ev.pooled_all) << "\n";
    }
    out.push_back(std::move(ev));
  }
  return out;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                                const std::vector<double>& values,
                                const SweepCommandOptions& opts) {
  if (values.empty()) throw ConfigError("sweep axis has no values");
  ExperimentConfig checked = cfg;
  checked.sweep_axis = axis;
  checked.sweep_values = values;
  checked.validate();
  for (double v : values) {
    if (axis == SweepAxis::kReplayRatio && !(v >= 0.0)) {
      throw ConfigError("replay ratios must be >= 0");
    }
  }
  const fs::path table = cfg.out_dir / ("sweep_" + std::string(to_string(axis)) + ".csv");
  std::error_code ec;
  if (fs::exists(table, ec) && !opts.force) {
    throw ConfigError("refusing to overwrite " + table.string() + " (use --force)");
  }

  const std::size_t n_seeds = cfg.seeds.size();
  std::vector<ForgettingSummary> results(values.size() * n_seeds);
  parallel_for(results.size(), opts.jobs, [&](std::size_t i) {
    const double v = values[i / n_seeds];
    const std::uint64_t seed = cfg.seeds[i % n_seeds];
    TrainConfig tc = seed_train_config(cfg, seed);
    std::optional<std::size_t> domains;
    if (axis == SweepAxis::kReplayRatio) {
      tc.replay_ratio_neg = v;
      tc.replay_ratio_pos = v;
    } else {
      domains = static_cast<std::size_t>(v);
    }
    const auto data = load_data_prefix(cfg, seed, domains);
    RunOptions ro;
    ro.keep_logs = false;
    results[i] = forgetting_metrics(run_regime(data, tc, ro).auc);
  });

  std::vector<SweepRow> rows;
  std::string csv =
      std::string(to_string(axis)) +
      ",seeds,final_auc_mean,final_auc_std,avg_final_auc_mean,avg_final_auc_std,bwt_mean,bwt_std\n";
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    std::vector<double> f, a, b;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const auto& r = results[vi * n_seeds + s];
      f.push_back(r.final_auc);
      a.push_back(r.avg_final_auc);
      b.push_back(r.bwt);
    }
    SweepRow row{values[vi], mean_std(f), mean_std(a), mean_std(b)};
    csv += fmt(row.value) + "," + std::to_string(n_seeds) + "," + fmt(row.final_auc.mean) + "," +
           fmt(row.final_auc.std) + "," + fmt(row.avg_final_auc.mean) + "," +
           fmt(row.avg_final_auc.std) + "," + fmt(row.bwt.mean) + "," + fmt(row.bwt.std) + "\n";
    if (opts.report != nullptr) {
      *opts.report << to_string(axis) << " = " << fmt4(row.value) << ": final AUC "
                   << fmt4(row.final_auc.mean) << " +- " << fmt4(row.final_auc.std) << "\n";
    }
    rows.push_back(row);
  }
  make_dirs(cfg.out_dir);
  write_text(table, csv);
  return rows;
}

std::vector<fs::path> cmd_plot_data(const fs::path& run_dir, bool force) {
  const RunArtifacts run = read_run(run_dir);
  std::vector<fs::path> written;
  for (std::uint64_t seed : run.cfg.seeds) {
    const fs::path dir = seed_dir(run_dir, seed);
    const fs::path plot_dir = dir / "plot";
    if (non_empty_dir(plot_dir) && !force) {
      throw ConfigError("refusing to overwrite " + plot_dir.string() + " (use --force)");
    }
    const auto data = load_experiment_data(run.cfg, seed);
    if (data.empty()) throw ConfigError("data has no domains");
    Checkpoint ck = load_newest(dir, run.cfg, run.config_json, seed, data.front().feature_dim());
    make_dirs(plot_dir);
    for (const auto& domain : data) {
      for (const auto& bag : domain.test_bags) {
        if (!bag.frame_labels) throw FormatError("test video " + bag.video_id + " has no frame labels");
        const auto scores = bag_frame_scores(ck.state.discriminators, bag);
        const auto& labels = *bag.frame_labels;
        std::string csv = "frame,score,label\n";
        for (std::size_t f = 0; f < scores.size(); ++f) {
          csv += std::to_string(f) + "," + fmt(scores[f]) + "," + std::to_string(labels[f]) + "\n";
        }
        const fs::path p = plot_dir / (bag.video_id + ".csv");
        write_text(p, csv);
        written.push_back(p);
      }
    }
  }
  return written;
}

}  // namespace cade
