#pragma once

#include "datadiet/data.hpp"
#include "datadiet/scores.hpp"
#include "datadiet/trainer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace datadiet {

enum class PolicyKind { keep_top, sliding_window, random };

std::string to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& name);

// fraction is always the fraction KEPT. offset is the fraction of
// lowest-scoring examples discarded before a sliding window starts.
struct SelectionPolicy {
  PolicyKind kind = PolicyKind::keep_top;
  double fraction = 1.0;
  double offset = 0.0;
  std::uint64_t seed = 0;  // random policy only

  void validate() const;
};

// Kept ids in ascending id order. Scores are sorted ascending with ties broken
// by ascending id; |kept| = round(fraction * N).
std::vector<ExampleId> select(const ScoreTable& scores, const SelectionPolicy& policy, std::size_t n);

// Score table of zeros over the dataset ids; lets the random policy run
// without a score source.
ScoreTable uniform_scores(const Dataset& data);

struct PruneResult {
  SelectionPolicy policy;
  std::string score_kind;  // "none" for the random baseline
  int score_epoch = 0;
  std::vector<RunSeeds> score_seeds;
  std::vector<ExampleId> kept;
  std::vector<RunSeeds> retrain_seeds;
  std::vector<double> test_accuracy;
  std::vector<double> final_train_loss;
  double mean_accuracy = 0;
  double p16_accuracy = 0;
  double p84_accuracy = 0;
};

// Linear interpolation between order statistics (q in [0,1]).
double percentile(std::vector<double> values, double q);

struct RetrainOptions {
  int jobs = 1;
};

// Retrains fresh initializations on the selected subset using the step budget
// and schedule of the full dataset.
template <typename Scalar>
PruneResult prune_and_retrain(const ModelSpec& spec, const Dataset& data, const Dataset& test,
                              const TrainConfig& config, const ScoreTable& scores, const SelectionPolicy& policy,
                              const std::vector<RunSeeds>& retrain_seeds, const RetrainOptions& options = {});

// keep-top per score source plus a random baseline, at every fraction.
template <typename Scalar>
std::vector<PruneResult> sweep_fraction(const ModelSpec& spec, const Dataset& data, const Dataset& test,
                                        const TrainConfig& config, const std::vector<ScoreTable>& sources,
                                        const std::vector<double>& fractions, int n_retrains,
                                        std::uint64_t master_seed, const RetrainOptions& options = {});

// Sliding windows of fixed kept fraction at each offset.
template <typename Scalar>
std::vector<PruneResult> sweep_window(const ModelSpec& spec, const Dataset& data, const Dataset& test,
                                      const TrainConfig& config, const ScoreTable& scores,
                                      const std::vector<double>& offsets, double fraction, int n_retrains,
                                      std::uint64_t master_seed, const RetrainOptions& options = {});

std::string results_csv(const std::vector<PruneResult>& results, const std::string& config_digest,
                        std::uint64_t master_seed);
Json results_summary(const std::vector<PruneResult>& results, const std::string& config_digest,
                     std::uint64_t master_seed);

}  // namespace datadiet
