#pragma once

// Experiment orchestration behind the `datadiet` command-line tool. Each
// subcommand reads one JSON configuration (defaults + file + --set overrides),
// derives every seed from the master seed, and writes its artifacts under
// <out>/<config-digest>/{checkpoints,scores,results}/.

#include "datadiet/data.hpp"
#include "datadiet/io.hpp"
#include "datadiet/nn_core.hpp"
#include "datadiet/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace datadiet {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitArtifact = 3,
  kExitContract = 4,
};

// Failure carrying the process exit code it maps to.
class CliError : public Error {
 public:
  CliError(int code, const std::string& what) : Error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

Json default_config();

// Applies `a.b.c=value`; value is parsed as JSON when possible, otherwise kept as a string.
void apply_override(Json& config, const std::string& assignment);

struct ExperimentConfig {
  Json json;  // fully resolved configuration
  std::uint64_t master_seed = 0;
  std::filesystem::path out_root;
  bool f64 = false;

  std::string digest() const;
  std::filesystem::path run_dir() const;
  TrainConfig train_config() const;
  ModelSpec model_spec(const Dataset& data) const;
};

struct CommandOptions {
  std::optional<std::filesystem::path> config_path;
  std::vector<std::string> overrides;
  int jobs = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  bool f64 = false;
  std::optional<std::filesystem::path> checkpoint;
  std::vector<std::filesystem::path> score_files;
};

ExperimentConfig resolve_config(const CommandOptions& options);

// Loads train/test splits named by the config (synthetic, idx, cifar or
// snapshot) and applies the configured label corruption to the training split.
DatasetSplit load_data(const ExperimentConfig& config);

// Runs one subcommand; returns the process exit code. Messages go to `out`/`err`.
int run_command(const std::string& command, const CommandOptions& options, std::ostream& out, std::ostream& err);

// Spearman report for two score files (exit codes as run_command).
int run_correlate(const std::filesystem::path& a, const std::filesystem::path& b, std::ostream& out,
                  std::ostream& err);

}  // namespace datadiet
