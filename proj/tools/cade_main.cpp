// Command-line front-end: gen-data, train, eval, sweep, plot-data.
// Exit codes: 0 success, 1 usage or config, 2 data format, 3 numeric failure.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cade/cli.hpp"
#include "cade/error.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::string regime;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required) {
  auto* c = cmd->add_option("--config", f.config, "experiment config (JSON)");
  if (config_required) c->required();
  cmd->add_option("--out", f.out, "output directory (overrides the config)");
  cmd->add_option("--seed", f.seed, "single run seed");
  cmd->add_option("--seeds", f.seeds, "comma-separated run seeds");
  cmd->add_option("--regime", f.regime, "cade, ft, mtl or vae_gr");
  cmd->add_flag("--force", f.force, "overwrite existing outputs");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

cade::ExperimentConfig resolve_config(const CommonFlags& f) {
  cade::ExperimentConfig cfg =
      f.config.empty() ? cade::ExperimentConfig{} : cade::load_experiment_config(f.config);
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (!f.regime.empty()) cfg.train.regime = cade::parse_regime(f.regime);
  if (f.seed && !f.seeds.empty()) throw cade::ConfigError("use either --seed or --seeds");
  if (f.seed) cfg.seeds = {*f.seed};
  if (!f.seeds.empty()) {
    cfg.seeds.clear();
    for (const auto& s : split_list(f.seeds)) {
      try {
        std::size_t used = 0;
        cfg.seeds.push_back(std::stoull(s, &used));
        if (used != s.size()) throw std::invalid_argument(s);
      } catch (const std::exception&) {
        throw cade::ConfigError("--seeds: not a non-negative integer: " + s);
      }
    }
  }
  cfg.validate();
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{"Continual weakly supervised anomaly detection experiments"};
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, eval_f, sweep_f, plot_f;
  auto* gen = app.add_subcommand("gen-data", "write the synthetic stream as a feature dataset");
  add_common(gen, gen_f, false);

  auto* train = app.add_subcommand("train", "train every seed and write checkpoints and metrics");
  add_common(train, train_f, false);
  bool resume = false;
  std::optional<int> stop_after;
  unsigned jobs = 1;
  train->add_flag("--resume", resume, "continue from the newest checkpoint of each seed");
  train->add_option("--stop-after", stop_after, "stop after this many domains");
  train->add_option("--jobs", jobs, "seeds trained concurrently")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "re-evaluate a run's newest checkpoints");
  add_common(eval, eval_f, false);
  std::string eval_run;
  eval->add_option("--run", eval_run, "run directory")->required();

  auto* sweep = app.add_subcommand("sweep", "one summary row per axis value");
  add_common(sweep, sweep_f, false);
  std::string axis, values;
  unsigned sweep_jobs = 1;
  sweep->add_option("--axis", axis, "replay_ratio or domains");
  sweep->add_option("--values", values, "comma-separated values, fractions allowed (1/3)");
  sweep->add_option("--jobs", sweep_jobs, "runs executed concurrently")->check(CLI::PositiveNumber);

  auto* plot = app.add_subcommand("plot-data", "per-video frame,score,label series");
  std::string plot_run;
  bool plot_force = false;
  plot->add_option("--run", plot_run, "run directory")->required();
  plot->add_flag("--force", plot_force, "overwrite existing plot files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (gen->parsed()) {
    const auto cfg = resolve_config(gen_f);
    const std::filesystem::path out =
        gen_f.out.empty() ? cfg.out_dir / "data" : std::filesystem::path(gen_f.out);
    const auto manifest = cade::cmd_gen_data(cfg, out, cfg.seeds.front(), gen_f.force);
    std::cout << manifest.string() << "\n";
  } else if (train->parsed()) {
    const auto cfg = resolve_config(train_f);
    cade::TrainCommandOptions o;
    o.force = train_f.force;
    o.resume = resume;
    o.stop_after_domain = stop_after;
    o.jobs = jobs;
    o.report = &std::cout;
    const auto res = cade::cmd_train(cfg, o);
    std::cout << "run directory: " << res.run_dir.string() << "\n";
  } else if (eval->parsed()) {
    std::optional<cade::ExperimentConfig> data;
    if (!eval_f.config.empty()) data = resolve_config(eval_f);
    cade::cmd_eval(eval_run, data, &std::cout);
  } else if (sweep->parsed()) {
    const auto cfg = resolve_config(sweep_f);
    std::optional<cade::SweepAxis> ax = cfg.sweep_axis;
    if (!axis.empty()) ax = cade::parse_sweep_axis(axis);
    if (!ax) throw cade::ConfigError("sweep needs --axis or sweep.axis in the config");
    std::vector<double> vals = cfg.sweep_values;
    if (!values.empty()) {
      vals.clear();
      for (const auto& v : split_list(values)) vals.push_back(cade::parse_fraction(v));
    }
    cade::SweepCommandOptions o;
    o.force = sweep_f.force;
    o.jobs = sweep_jobs;
    o.report = &std::cout;
    cade::cmd_sweep(cfg, *ax, vals, o);
  } else if (plot->parsed()) {
    const auto files = cade::cmd_plot_data(plot_run, plot_force);
    std::cout << files.size() << " series written\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const cade::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const cade::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const cade::Error& e) {
    // Format, I/O, dimension and undefined-metric errors all stem from the data.
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
