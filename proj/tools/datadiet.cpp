#include "datadiet/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

void add_common(CLI::App* cmd, datadiet::CommandOptions& o, std::string& config_path, std::string& out_path,
                std::uint64_t& seed) {
  cmd->add_option("--config", config_path, "JSON configuration file");
  cmd->add_option("--set", o.overrides, "Override a config value, e.g. --set train.epochs=10");
  cmd->add_option("--jobs", o.jobs, "Worker threads for independent runs")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", seed, "Master seed");
  cmd->add_option("--out", out_path, "Output root (default $DATADIET_OUT or ./datadiet_out)");
  cmd->add_flag("--f64", o.f64, "Run in double precision");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Score, prune and analyse training data for small classifiers"};
  app.require_subcommand(1);

  datadiet::CommandOptions options;
  std::string config_path, out_path, checkpoint;
  std::uint64_t seed = 0;
  std::vector<std::string> score_files;
  int epochs = -1;
  double keep_fraction = -1, prune_fraction = -1;

  struct Entry {
    const char* name;
    const char* help;
  };
  const Entry entries[] = {
      {"gen-data", "Write the configured synthetic task as dataset snapshots"},
      {"train", "Train one model and save checkpoints, metrics and presentation log"},
      {"score", "Compute GraNd, EL2N or forgetting scores averaged over runs"},
      {"prune", "Select a subset by score and retrain on it"},
      {"sweep", "Keep-top and random baselines across kept fractions"},
      {"window-sweep", "Sliding-window selection across offsets and label-noise levels"},
      {"velocity", "Kernel velocity per score bucket between consecutive epochs"},
      {"barrier", "Error barriers between spawned children on score-defined subsets"},
  };
  for (const auto& e : entries) {
    auto* cmd = app.add_subcommand(e.name, e.help);
    add_common(cmd, options, config_path, out_path, seed);
    cmd->add_option("--epochs", epochs, "Shortcut for --set train.epochs=N");
    cmd->add_option("--scores", score_files, "Precomputed score file(s) to use instead of computing them");
    if (std::string(e.name) == "score") cmd->add_option("--checkpoint", checkpoint, "Score a single checkpoint");
    if (std::string(e.name) == "prune") {
      cmd->add_option("--keep-fraction", keep_fraction, "Fraction of examples kept");
      cmd->add_option("--prune-fraction", prune_fraction, "Fraction of examples removed");
    }
  }

  std::string file_a, file_b;
  auto* correlate = app.add_subcommand("correlate", "Spearman rank correlation between two score files");
  correlate->add_option("a", file_a, "First score CSV")->required();
  correlate->add_option("b", file_b, "Second score CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : datadiet::kExitConfig;
  }

  if (correlate->parsed()) return datadiet::run_correlate(file_a, file_b, std::cout, std::cerr);

  auto* cmd = app.get_subcommands().front();
  if (!config_path.empty()) options.config_path = config_path;
  if (!out_path.empty()) options.out = out_path;
  if (cmd->count("--seed")) options.seed = seed;
  if (!checkpoint.empty()) options.checkpoint = checkpoint;
  for (const auto& f : score_files) options.score_files.emplace_back(f);
  if (cmd->count("--epochs")) options.overrides.push_back("train.epochs=" + std::to_string(epochs));
  if (keep_fraction >= 0 && prune_fraction >= 0) {
    std::cerr << "configuration error: give either --keep-fraction or --prune-fraction\n";
    return datadiet::kExitConfig;
  }
  if (keep_fraction >= 0) options.overrides.push_back("prune.fraction=" + datadiet::format_double(keep_fraction));
  if (prune_fraction >= 0) options.overrides.push_back("prune.fraction=" + datadiet::format_double(1.0 - prune_fraction));
  return datadiet::run_command(cmd->get_name(), options, std::cout, std::cerr);
}
