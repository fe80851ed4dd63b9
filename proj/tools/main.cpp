#include <functional>
#include <iostream>

#include "CLI11.hpp"
#include "legato/experiment.hpp"
#include "legato/logging.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool force = false;
  int workers = 0;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "Experiment config (JSON)")->required();
  cmd->add_option("--out", flags.out, "Output directory (overrides config)");
  cmd->add_option("--seed", flags.seed, "Seed override for simulation and training")
      ->each([&flags](const std::string&) { flags.seed_set = true; });
  cmd->add_flag("--force", flags.force, "Overwrite existing outputs");
  cmd->add_option("--workers", flags.workers, "Sweep worker threads");
}

int dispatch(const CommonFlags& flags,
             const std::function<int(const legato::ExperimentConfig&)>& fn) {
  legato::CliOverrides overrides;
  if (!flags.out.empty()) overrides.out = flags.out;
  if (flags.seed_set) overrides.seed = flags.seed;
  overrides.force = flags.force;
  if (flags.workers > 0) overrides.workers = flags.workers;
  legato::ExperimentConfig cfg = legato::load_experiment_config(flags.config, overrides);
  return fn(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LEGATO: latent-graph autoencoder for multi-view tabular data"};
  app.require_subcommand(1);

  CommonFlags flags;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic multi-view dataset");
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  auto* evaluate = app.add_subcommand("evaluate", "Probe a checkpoint's representations");
  auto* attribute = app.add_subcommand("attribute", "Inspect learned graph and attributions");
  auto* sweep = app.add_subcommand("sweep", "Run a K/w/variant/seed grid");
  for (auto* cmd : {simulate, train, evaluate, attribute, sweep}) add_common(cmd, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return legato::kExitConfig;
  }

  try {
    if (simulate->parsed()) return dispatch(flags, legato::cmd_simulate);
    if (train->parsed()) return dispatch(flags, legato::cmd_train);
    if (evaluate->parsed()) return dispatch(flags, legato::cmd_evaluate);
    if (attribute->parsed()) return dispatch(flags, legato::cmd_attribute);
    if (sweep->parsed()) return dispatch(flags, legato::cmd_sweep);
  } catch (const legato::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return legato::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return legato::kExitRuntime;
  }
  return legato::kExitConfig;
}
