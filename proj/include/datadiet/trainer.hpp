#pragma once

#include "datadiet/common.hpp"
#include "datadiet/data.hpp"
#include "datadiet/io.hpp"
#include "datadiet/nn_core.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace datadiet {

struct TrainConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;  // Nesterov
  double weight_decay = 5e-4;
  int batch_size = 128;
  int epochs = 40;
  double lr_decay_factor = 5.0;
  std::vector<int> decay_epochs{24, 32};
  std::uint64_t data_seed = 0;
  std::uint64_t init_seed = 0;
  std::vector<int> checkpoint_epochs{0, 1, 2, 4, 8};
  // Examples that define one epoch of steps; 0 means the training set size.
  // Pruned runs set it to the full dataset size so the step budget and the
  // decay boundaries match the full-data run.
  std::size_t reference_size = 0;

  void validate() const;
  Json to_json() const;
  static TrainConfig from_json(const Json& j);
  std::string digest() const;
  RunSeeds seeds() const { return {init_seed, data_seed}; }
  TrainConfig with_seeds(const RunSeeds& s) const;
};

double lr_at(const TrainConfig& config, int epoch);
std::int64_t steps_per_epoch(const TrainConfig& config, std::size_t train_size);

Json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const Json& j);

template <typename Scalar>
struct TrainState {
  ParamVector<Scalar> params;
  VectorX<Scalar> momentum;
  std::int64_t step = 0;
};

template <typename Scalar>
struct Checkpoint {
  int epoch = 0;
  TrainState<Scalar> state;
  ModelSpec spec;
  std::string config_digest;
  RunSeeds seeds;
};

template <typename Scalar>
std::string checkpoint_bytes(const Checkpoint<Scalar>& checkpoint);
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Scalar>& checkpoint);
// Converts on load if the file was written with the other precision.
template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path);

struct Presentation {
  std::int64_t step = 0;
  bool correct = false;
};

// Per-example correctness at each minibatch presentation, measured on the
// pre-update forward pass.
struct PresentationLog {
  std::vector<ExampleId> ids;
  std::vector<std::vector<Presentation>> entries;  // parallel to ids
  std::int64_t steps_per_epoch = 1;

  std::string to_csv() const;
  static PresentationLog from_csv(const std::filesystem::path& path, std::int64_t steps_per_epoch);
};

struct EpochMetrics {
  int epoch = 0;  // 1-based: metrics for the epoch that just finished
  double train_loss = 0;
  double train_accuracy = 0;
  double test_accuracy = -1;  // -1 when no test set was supplied
  double learning_rate = 0;
};

template <typename Scalar>
struct BatchOutcome {
  std::vector<Scalar> losses;
  std::vector<std::uint8_t> correct;
};

// One Nesterov SGD step on the mean minibatch loss plus L2 weight decay.
// Returns the pre-update per-example losses and correctness.
template <typename Scalar>
BatchOutcome<Scalar> sgd_step(TrainState<Scalar>& state, const ModelSpec& spec, const MatrixX<Scalar>& inputs,
                              std::span<const int> labels, double lr, const TrainConfig& config);

template <typename Scalar>
class Trainer {
 public:
  Trainer(const ModelSpec& spec, const Dataset& data, const TrainConfig& config);
  // Continues from a saved state; config.data_seed decides the remaining order.
  Trainer(const ModelSpec& spec, const Dataset& data, const TrainConfig& config, TrainState<Scalar> start);

  void record_presentations(PresentationLog* log);
  EpochMetrics run_epoch(const Dataset* test = nullptr);

  int completed_epochs() const { return static_cast<int>(state_.step / steps_per_epoch_); }
  bool finished() const { return completed_epochs() >= config_.epochs; }
  std::int64_t steps_per_epoch() const { return steps_per_epoch_; }
  const TrainState<Scalar>& state() const { return state_; }
  Checkpoint<Scalar> checkpoint() const;

 private:
  void refresh_order(std::int64_t pass);

  ModelSpec spec_;
  const Dataset& data_;
  TrainConfig config_;
  TrainState<Scalar> state_;
  std::int64_t steps_per_epoch_ = 1;
  std::int64_t batches_per_pass_ = 1;
  std::int64_t cached_pass_ = -1;
  std::vector<std::size_t> order_;
  PresentationLog* log_ = nullptr;
};

struct TrainOptions {
  const Dataset* test = nullptr;
  bool record_presentations = false;
  int stop_epoch = -1;  // stop early after this many epochs; -1 = config.epochs
};

template <typename Scalar>
struct TrainResult {
  std::vector<Checkpoint<Scalar>> checkpoints;  // requested epochs, then the final state
  PresentationLog log;
  std::vector<EpochMetrics> history;

  const Checkpoint<Scalar>& at_epoch(int epoch) const;
  const Checkpoint<Scalar>& final() const { return checkpoints.back(); }
};

template <typename Scalar>
TrainResult<Scalar> train(const ModelSpec& spec, const Dataset& data, const TrainConfig& config,
                          const TrainOptions& options = {});

template <typename Scalar>
TrainResult<Scalar> resume_training(const Checkpoint<Scalar>& from, const Dataset& data, const TrainConfig& config,
                                    const TrainOptions& options = {});

struct EvalResult {
  double accuracy = 0;
  double mean_loss = 0;
  std::vector<std::uint8_t> errors;  // 1 where argmax(logits) != label
};

template <typename Scalar>
EvalResult evaluate(const ParamVector<Scalar>& params, const ModelSpec& spec, const Dataset& data);

std::string metrics_csv(const std::vector<EpochMetrics>& history);

}  // namespace datadiet
