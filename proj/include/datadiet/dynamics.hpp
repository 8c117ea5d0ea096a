#pragma once

#include "datadiet/data.hpp"
#include "datadiet/nn_core.hpp"
#include "datadiet/scores.hpp"
#include "datadiet/trainer.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace datadiet {

// Empirical NTK submatrix Psi Psi^T over m examples, rows ordered
// example-major then logit: row i*K + k holds the gradient of logit k on example i.
struct GramMatrix {
  MatrixX<double> values;
  std::vector<ExampleId> ids;
  int epoch = 0;
  int num_classes = 0;
};

inline constexpr std::size_t kMaxJacobianElements = std::size_t{1} << 29;

template <typename Scalar>
GramMatrix ntk_gram(const ParamVector<Scalar>& params, const ModelSpec& spec, const Dataset& data,
                    const std::vector<std::size_t>& indices, int epoch = 0,
                    std::size_t max_elements = kMaxJacobianElements);

// 1 - <A, B>_F / (||A||_F ||B||_F), in [0, 2].
double kernel_velocity(const GramMatrix& a, const GramMatrix& b);

struct VelocityPoint {
  std::size_t start_rank = 0;
  double velocity = 0;
};

// Dataset indices ordered by ascending score, ties by ascending id.
std::vector<std::size_t> score_order(const ScoreTable& scores, const Dataset& data);

// Velocity between two consecutive-epoch checkpoints for buckets of `bucket`
// contiguous score-sorted examples starting at each rank in start_ranks.
template <typename Scalar>
std::vector<VelocityPoint> velocity_profile(const Checkpoint<Scalar>& at_epoch, const Checkpoint<Scalar>& next_epoch,
                                            const Dataset& data, const ScoreTable& scores, std::size_t bucket,
                                            const std::vector<std::size_t>& start_ranks);

// All buckets at 0, stride, 2*stride, ... that fit inside the dataset.
std::vector<std::size_t> bucket_starts(std::size_t n, std::size_t bucket, std::size_t stride);

// alpha * a + (1 - alpha) * b; exact at alpha in {0, 1}.
template <typename Scalar>
ParamVector<Scalar> interpolate(const ParamVector<Scalar>& a, const ParamVector<Scalar>& b, double alpha);

enum class BarrierSurface { error, loss };

struct BarrierValue {
  double barrier = 0;
  std::vector<double> deviations;  // per alpha grid point
};

std::vector<double> default_alpha_grid(bool mid_only = false);

// Largest deviation over the grid of the surface along the segment above
// the chord between the endpoint values.
template <typename Scalar>
BarrierValue error_barrier(const ParamVector<Scalar>& a, const ParamVector<Scalar>& b, const ModelSpec& spec,
                           const Dataset& subset, const std::vector<double>& alpha_grid,
                           BarrierSurface surface = BarrierSurface::error);

struct BarrierCurve {
  int spawn_epoch = 0;
  std::string subset_kind;  // lowest-score | highest-score | random
  std::size_t subset_size = 0;
  std::vector<double> pair_barriers;
  double mean = 0;
  std::vector<double> alpha_grid;
};

struct SpawnSettings {
  std::vector<int> spawn_epochs;
  int score_epoch = 4;  // EL2N epoch of the parent used to build the subsets
  std::size_t subset_size = 1000;
  int n_pairs = 3;
  std::vector<double> alpha_grid = default_alpha_grid();
  std::uint64_t child_seed = 0;
  int jobs = 1;
  std::optional<ScoreTable> scores;  // overrides the parent's EL2N scores
};

// Trains a parent (seeds from config), branches n_pairs child pairs at every
// spawn epoch with fresh data-order seeds, and measures end-of-training
// barriers on the lowest-score, highest-score and random subsets.
template <typename Scalar>
std::vector<BarrierCurve> spawn_barriers(const ModelSpec& spec, const Dataset& data, const TrainConfig& config,
                                         const SpawnSettings& settings);

std::string velocity_csv(int epoch, const std::vector<VelocityPoint>& points, const std::string& config_digest,
                         std::uint64_t master_seed);
std::string barrier_csv(const std::vector<BarrierCurve>& curves, const std::string& config_digest,
                        std::uint64_t master_seed);

}  // namespace datadiet
