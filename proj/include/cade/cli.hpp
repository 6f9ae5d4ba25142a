#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cade/datagen.hpp"
#include "cade/evaluation.hpp"
#include "cade/trainer.hpp"

namespace cade {

enum class SweepAxis { kReplayRatio, kDomains };
const char* to_string(SweepAxis a);
SweepAxis parse_sweep_axis(const std::string& name);

struct ExperimentConfig {
  // Exactly one data source; an empty config defaults to the synthetic stream.
  std::optional<SyntheticStreamConfig> synthetic = SyntheticStreamConfig{};
  std::optional<std::filesystem::path> manifest;
  // Run seed s reads the synthetic stream seeded with synthetic.seed + s.
  bool resample_data_per_seed = true;
  TrainConfig train;
  std::filesystem::path out_dir = "runs/default";
  std::vector<std::uint64_t> seeds{0};
  std::optional<SweepAxis> sweep_axis;
  std::vector<double> sweep_values;

  // Throws ConfigError.
  void validate() const;
};

// Strict parse: unknown keys and wrong types are ConfigError. Relative
// manifest paths resolve against `base_dir`.
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
// Every key with its effective value; parsing the result gives back the same config.
std::string experiment_config_json(const ExperimentConfig& cfg);

// "1/3", "0.5" or "2".
double parse_fraction(const std::string& text);

// Domains used by run seed `seed`.
std::vector<DomainDataset> load_experiment_data(const ExperimentConfig& cfg, std::uint64_t seed);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
};
MeanStd mean_std(const std::vector<double>& values);

std::string auc_matrix_csv(const AucMatrix& auc);

// Writes the stream of run seed `seed`. Refuses an existing manifest unless forced.
std::filesystem::path cmd_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                   std::uint64_t seed, bool force);

struct TrainCommandOptions {
  bool force = false;
  // Continue each seed from its newest checkpoint in an existing run dir.
  bool resume = false;
  std::optional<int> stop_after_domain;
  unsigned jobs = 1;
  std::ostream* report = nullptr;  // human summary
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  AucMatrix auc;
  bool complete = false;
};

struct TrainOutcome {
  std::filesystem::path run_dir;
  std::vector<SeedOutcome> seeds;
};

// Layout of run_dir: config.json, summary.json and per seed
// seed_<s>/{domain_<t>.ckpt, losses.log, auc_matrix.csv, summary.json}.
TrainOutcome cmd_train(const ExperimentConfig& cfg, const TrainCommandOptions& opts);

// Re-evaluates each seed's newest checkpoint on `data` (the run's own data
// when absent) and writes seed_<s>/eval.json.
std::vector<DomainEvaluation> cmd_eval(const std::filesystem::path& run_dir,
                                       const std::optional<ExperimentConfig>& data,
                                       std::ostream* report = nullptr);

struct SweepRow {
  double value = 0.0;
  MeanStd final_auc;
  MeanStd avg_final_auc;
  MeanStd bwt;
};

struct SweepCommandOptions {
  bool force = false;
  unsigned jobs = 1;
  std::ostream* report = nullptr;
};

// Writes out_dir/sweep_<axis>.csv with one row per value.
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                                const std::vector<double>& values,
                                const SweepCommandOptions& opts);

// Writes seed_<s>/plot/<video_id>.csv (frame,score,label) for every test video.
std::vector<std::filesystem::path> cmd_plot_data(const std::filesystem::path& run_dir, bool force);

}  // namespace cade
