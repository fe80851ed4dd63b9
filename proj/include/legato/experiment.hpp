#pragma once

#include <filesystem>
#include <optional>

#include "legato/attribution.hpp"
#include "legato/train.hpp"

namespace legato {

/// Bad usage or configuration; maps to exit code 1. Anything else thrown
/// during a command maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct AttributeOptions {
  std::string target = "norm";  // "norm" or "coordinate"
  int dim = 0;                  // coordinate target only
  std::size_t samples = 64;     // test inputs averaged
  int steps = 50;
};

struct SweepAxes {
  std::vector<std::size_t> k_values = {2, 4, 6, 8, 10};
  std::vector<double> w_values = {0.0, 0.25, 0.5, 0.75};
  std::vector<std::string> variants = {"full"};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  SimSpec::Mode mode = SimSpec::Mode::Local;
  std::size_t num_samples = 2000;
  std::size_t feature_dim = 20;
  bool save_checkpoints = false;
};

struct ExperimentConfig {
  std::optional<SimSpec> sim;
  std::optional<std::filesystem::path> data_dir;
  std::optional<std::filesystem::path> checkpoint;
  TrainConfig train;
  bool run_grid_search = false;
  AttributeOptions attribute;
  std::optional<SweepAxes> sweep;
  std::filesystem::path out = "out";
  bool force = false;
  int workers = 1;
};

struct CliOverrides {
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::optional<int> workers;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const CliOverrides& overrides);

int cmd_simulate(const ExperimentConfig& cfg);
int cmd_train(const ExperimentConfig& cfg);
int cmd_evaluate(const ExperimentConfig& cfg);
int cmd_attribute(const ExperimentConfig& cfg);
int cmd_sweep(const ExperimentConfig& cfg);

/// Checkpoint path used by evaluate/attribute: explicit config value or
/// <out>/checkpoint.bin.
std::filesystem::path resolve_checkpoint(const ExperimentConfig& cfg);

}  // namespace legato
