#pragma once

#include "datadiet/common.hpp"
#include "datadiet/data.hpp"
#include "datadiet/nn_core.hpp"
#include "datadiet/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace datadiet {

enum class ScoreKind { grand, el2n, forget, external };

std::string to_string(ScoreKind kind);
ScoreKind score_kind_from_string(const std::string& name);

struct ScoreTable {
  ScoreKind kind = ScoreKind::el2n;
  int epoch = 0;
  std::vector<ExampleId> ids;
  std::vector<double> values;  // parallel to ids
  // forget tables: examples never classified correctly. Their value is the
  // sentinel max(finite) + 1.
  std::vector<std::uint8_t> never_learned;
  std::vector<RunSeeds> seeds;
  std::string dataset_digest;

  std::size_t size() const { return ids.size(); }
  bool has_sentinel() const;
  // Values reordered to follow the given id list; throws LookupError on a missing id.
  std::vector<double> aligned_to(const std::vector<ExampleId>& order) const;
  void validate() const;
};

// Single draw of the gradient-norm score at the given weights (loss gradient
// only, no weight-decay term).
template <typename Scalar>
ScoreTable grand_single(const ParamVector<Scalar>& params, const ModelSpec& spec, const Dataset& data);

// Single draw of the error-vector norm ||softmax(f(x)) - y||.
template <typename Scalar>
ScoreTable el2n_single(const ParamVector<Scalar>& params, const ModelSpec& spec, const Dataset& data);

// Pointwise mean of tables with identical kind, epoch and ids.
ScoreTable average_scores(const std::vector<ScoreTable>& tables);

// Mean forgetting counts over runs; an id never learned in some run is
// placed above every finite mean.
ScoreTable average_forgetting(const std::vector<ScoreTable>& tables);

// Counts correct -> incorrect transitions between consecutive presentations.
ScoreTable forgetting_scores(const PresentationLog& log, int total_epochs);

// Pearson correlation of mid-ranks, after aligning by id.
double spearman(const ScoreTable& a, const ScoreTable& b);
double spearman(const std::vector<double>& a, const std::vector<double>& b);
// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> mid_ranks(const std::vector<double>& values);

// Seed pairs for n independent runs derived from a master seed and stream tag.
std::vector<RunSeeds> run_seed_list(std::uint64_t master_seed, std::uint64_t stream, int n_runs);

inline constexpr std::uint64_t kScoreSeedStream = 101;
inline constexpr std::uint64_t kRetrainSeedStream = 202;
inline constexpr std::uint64_t kSelectionSeedStream = 303;
inline constexpr std::uint64_t kChildSeedStream = 404;

struct ScoreRunOptions {
  int jobs = 1;
};

// One table per seed pair; each run trains only as far as the requested epoch
// (forget tables train to completion). Epoch 0 scores the fresh initialization.
template <typename Scalar>
std::vector<ScoreTable> score_runs(const ModelSpec& spec, const Dataset& data, const TrainConfig& config,
                                   ScoreKind kind, int epoch, const std::vector<RunSeeds>& seeds,
                                   const ScoreRunOptions& options = {});

template <typename Scalar>
ScoreTable score_over_runs(const ModelSpec& spec, const Dataset& data, const TrainConfig& config, ScoreKind kind,
                           int epoch, const std::vector<RunSeeds>& seeds, const ScoreRunOptions& options = {});

// CSV `example_id,score` plus a JSON sidecar at <path>.json.
void save_scores(const std::filesystem::path& csv_path, const ScoreTable& table, const std::string& config_digest,
                 std::uint64_t master_seed);
// Reads a score CSV; the sidecar is optional (kind defaults to external).
ScoreTable load_scores(const std::filesystem::path& csv_path);
std::string scores_csv(const ScoreTable& table, const std::string& config_digest, std::uint64_t master_seed);

}  // namespace datadiet
