#include "datadiet/dynamics.hpp"

#include "datadiet/errors.hpp"
#include "datadiet/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace datadiet {

template <typename Scalar>
GramMatrix ntk_gram(const ParamVector<Scalar>& params, const ModelSpec& spec, const Dataset& data,
                    const std::vector<std::size_t>& indices, int epoch, std::size_t max_elements) {
  if (indices.empty()) throw ConfigError("gram matrix needs at least one example");
  const auto classes = static_cast<std::size_t>(spec.num_classes());
  const auto rows = indices.size() * classes;
  const auto required = rows * static_cast<std::size_t>(params.size());
  if (required > max_elements) {
    throw ResourceError("NTK submatrix needs a " + std::to_string(rows) + " x " + std::to_string(params.size()) +
                        " Jacobian (" + std::to_string(required) + " elements, limit " +
                        std::to_string(max_elements) + ")");
  }
  MatrixX<Scalar> psi(static_cast<Index>(rows), params.size());
  GramMatrix gram;
  gram.epoch = epoch;
  gram.num_classes = spec.num_classes();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= data.size()) throw LookupError("example index out of range");
    const VectorX<Scalar> x = data.inputs.col(static_cast<Index>(indices[i])).template cast<Scalar>();
    psi.middleRows(static_cast<Index>(i * classes), static_cast<Index>(classes)) = logit_jacobian(params, spec, x);
    gram.ids.push_back(data.ids[indices[i]]);
  }
  const MatrixX<double> psi64 = psi.template cast<double>();
  MatrixX<double> lower = MatrixX<double>::Zero(psi64.rows(), psi64.rows());
  lower.template selfadjointView<Eigen::Lower>().rankUpdate(psi64);
  gram.values = lower.template selfadjointView<Eigen::Lower>();
  return gram;
}

double kernel_velocity(const GramMatrix& a, const GramMatrix& b) {
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols()) {
    throw ShapeError("gram matrices differ in shape");
  }
  if (a.ids != b.ids) throw ShapeError("gram matrices cover different examples");
  const double aa = (a.values.array() * a.values.array()).sum();
  const double bb = (b.values.array() * b.values.array()).sum();
  if (aa == 0 || bb == 0) throw UndefinedError("kernel velocity undefined for an all-zero gram matrix");
  const double inner = (a.values.array() * b.values.array()).sum();
  const double cosine = inner / std::sqrt(aa * bb);
  return std::clamp(1.0 - cosine, 0.0, 2.0);
}

std::vector<std::size_t> score_order(const ScoreTable& scores, const Dataset& data) {
  const auto values = scores.aligned_to(data.ids);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] < values[b];
    return data.ids[a] < data.ids[b];
  });
  return order;
}

std::vector<std::size_t> bucket_starts(std::size_t n, std::size_t bucket, std::size_t stride) {
  if (bucket == 0 || stride == 0) throw ConfigError("bucket size and stride must be positive");
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + bucket <= n; s += stride) starts.push_back(s);
  return starts;
}

template <typename Scalar>
std::vector<VelocityPoint> velocity_profile(const Checkpoint<Scalar>& at_epoch, const Checkpoint<Scalar>& next_epoch,
                                            const Dataset& data, const ScoreTable& scores, std::size_t bucket,
                                            const std::vector<std::size_t>& start_ranks) {
  if (next_epoch.epoch != at_epoch.epoch + 1) {
    throw ConfigError("velocity needs checkpoints at consecutive epochs (got " + std::to_string(at_epoch.epoch) +
                      " and " + std::to_string(next_epoch.epoch) + ")");
  }
  if (!(at_epoch.spec == next_epoch.spec)) throw ShapeError("checkpoints use different model specs");
  const auto order = score_order(scores, data);
  std::vector<VelocityPoint> points;
  for (auto start : start_ranks) {
    if (start + bucket > order.size()) throw ConfigError("velocity bucket extends past the dataset");
    const std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(start + bucket));
    const auto k0 = ntk_gram(at_epoch.state.params, at_epoch.spec, data, members, at_epoch.epoch);
    const auto k1 = ntk_gram(next_epoch.state.params, next_epoch.spec, data, members, next_epoch.epoch);
    points.push_back(VelocityPoint{start, kernel_velocity(k0, k1)});
  }
  return points;
}

template <typename Scalar>
ParamVector<Scalar> interpolate(const ParamVector<Scalar>& a, const ParamVector<Scalar>& b, double alpha) {
  if (a.layout != b.layout || a.size() != b.size()) throw ShapeError("cannot interpolate differently shaped weights");
  if (alpha == 1.0) return a;
  if (alpha == 0.0) return b;
  ParamVector<Scalar> out = b;
  out.values += static_cast<Scalar>(alpha) * (a.values - b.values);
  return out;
}

std::vector<double> default_alpha_grid(bool mid_only) {
  if (mid_only) return {0.0, 0.5, 1.0};
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  return grid;
}

template <typename Scalar>
BarrierValue error_barrier(const ParamVector<Scalar>& a, const ParamVector<Scalar>& b, const ModelSpec& spec,
                           const Dataset& subset, const std::vector<double>& alpha_grid, BarrierSurface surface) {
  if (subset.empty()) throw ConfigError("barrier subset is empty");
  const bool has_ends = std::find(alpha_grid.begin(), alpha_grid.end(), 0.0) != alpha_grid.end() &&
                        std::find(alpha_grid.begin(), alpha_grid.end(), 1.0) != alpha_grid.end();
  if (!has_ends) throw ConfigError("alpha grid must contain 0 and 1");
  for (double alpha : alpha_grid) {
    if (alpha < 0 || alpha > 1) throw ConfigError("alpha grid must lie in [0,1]");
  }
  auto value = [&](const ParamVector<Scalar>& w) {
    const auto eval = evaluate(w, spec, subset);
    return surface == BarrierSurface::error ? 1.0 - eval.accuracy : eval.mean_loss;
  };
  const double at_a = value(a), at_b = value(b);
  BarrierValue result;
  result.barrier = -std::numeric_limits<double>::infinity();
  for (double alpha : alpha_grid) {
    const double chord = at_b + alpha * (at_a - at_b);
    const double deviation = alpha == 1.0 ? 0.0 : alpha == 0.0 ? 0.0 : value(interpolate(a, b, alpha)) - chord;
    result.deviations.push_back(deviation);
    result.barrier = std::max(result.barrier, deviation);
  }
  return result;
}

template <typename Scalar>
std::vector<BarrierCurve> spawn_barriers(const ModelSpec& spec, const Dataset& data, const TrainConfig& config,
                                         const SpawnSettings& settings) {
  if (settings.spawn_epochs.empty()) throw ConfigError("need at least one spawn epoch");
  if (settings.n_pairs < 1) throw ConfigError("need at least one child pair");
  if (settings.subset_size == 0 || settings.subset_size > data.size()) {
    throw ConfigError("barrier subset size must lie in [1, N]");
  }
  for (int t : settings.spawn_epochs) {
    if (t < 0 || t > config.epochs) throw ConfigError("spawn epoch outside [0, epochs]");
  }
  TrainConfig parent_config = config;
  parent_config.checkpoint_epochs = settings.spawn_epochs;
  if (!settings.scores) parent_config.checkpoint_epochs.push_back(settings.score_epoch);
  std::sort(parent_config.checkpoint_epochs.begin(), parent_config.checkpoint_epochs.end());
  parent_config.checkpoint_epochs.erase(
      std::unique(parent_config.checkpoint_epochs.begin(), parent_config.checkpoint_epochs.end()),
      parent_config.checkpoint_epochs.end());
  const auto parent = train<Scalar>(spec, data, parent_config);

  const ScoreTable scores =
      settings.scores ? *settings.scores : el2n_single(parent.at_epoch(settings.score_epoch).state.params, spec, data);
  const auto order = score_order(scores, data);
  const auto m = settings.subset_size;
  auto subset_of = [&](auto first, auto last) {
    std::vector<ExampleId> ids;
    for (auto it = first; it != last; ++it) ids.push_back(data.ids[*it]);
    return take_subset(data, ids);
  };
  std::vector<std::size_t> shuffled(data.size());
  std::iota(shuffled.begin(), shuffled.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(settings.child_seed, kSelectionSeedStream, 0));
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, data.size() - 1);
    std::swap(shuffled[i], shuffled[pick(rng)]);
  }
  const std::vector<std::pair<std::string, Dataset>> subsets{
      {"lowest-score", subset_of(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m))},
      {"highest-score", subset_of(order.end() - static_cast<std::ptrdiff_t>(m), order.end())},
      {"random", subset_of(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(m))}};

  std::vector<BarrierCurve> curves;
  for (std::size_t e = 0; e < settings.spawn_epochs.size(); ++e) {
    const int spawn = settings.spawn_epochs[e];
    const auto& branch = parent.at_epoch(spawn);
    const auto children_count = static_cast<std::size_t>(2 * settings.n_pairs);
    std::vector<ParamVector<Scalar>> children(children_count);
    parallel_for(children_count, settings.jobs, [&](std::size_t c) {
      if (spawn >= config.epochs) {
        children[c] = branch.state.params;
        return;
      }
      TrainConfig child_config = config;
      child_config.checkpoint_epochs.clear();
      child_config.data_seed = derive_seed(settings.child_seed, kChildSeedStream * 1000 + static_cast<std::uint64_t>(spawn), c);
      children[c] = resume_training(branch, data, child_config).final().state.params;
    });
    for (const auto& [kind, subset] : subsets) {
      BarrierCurve curve;
      curve.spawn_epoch = spawn;
      curve.subset_kind = kind;
      curve.subset_size = subset.size();
      curve.alpha_grid = settings.alpha_grid;
      for (int p = 0; p < settings.n_pairs; ++p) {
        curve.pair_barriers.push_back(
            error_barrier(children[2 * p], children[2 * p + 1], spec, subset, settings.alpha_grid).barrier);
      }
      curve.mean = std::accumulate(curve.pair_barriers.begin(), curve.pair_barriers.end(), 0.0) /
                   static_cast<double>(curve.pair_barriers.size());
      curves.push_back(std::move(curve));
    }
  }
  return curves;
}

std::string velocity_csv(int epoch, const std::vector<VelocityPoint>& points, const std::string& config_digest,
                         std::uint64_t master_seed) {
  std::ostringstream out;
  out << provenance_comment(config_digest, master_seed);
  out << "epoch,bucket_start_rank,velocity\n";
  for (const auto& p : points) out << epoch << ',' << p.start_rank << ',' << format_double(p.velocity) << '\n';
  return out.str();
}

std::string barrier_csv(const std::vector<BarrierCurve>& curves, const std::string& config_digest,
                        std::uint64_t master_seed) {
  std::ostringstream out;
  out << provenance_comment(config_digest, master_seed);
  out << "spawn_epoch,subset_kind,pair_index,barrier\n";
  for (const auto& c : curves) {
    for (std::size_t p = 0; p < c.pair_barriers.size(); ++p) {
      out << c.spawn_epoch << ',' << c.subset_kind << ',' << p << ',' << format_double(c.pair_barriers[p]) << '\n';
    }
  }
  return out.str();
}

#define DATADIET_INSTANTIATE(S)                                                                                     \
  template GramMatrix ntk_gram<S>(const ParamVector<S>&, const ModelSpec&, const Dataset&,                          \
                                  const std::vector<std::size_t>&, int, std::size_t);                               \
  template std::vector<VelocityPoint> velocity_profile<S>(const Checkpoint<S>&, const Checkpoint<S>&, const Dataset&, \
                                                          const ScoreTable&, std::size_t,                           \
                                                          const std::vector<std::size_t>&);                         \
  template ParamVector<S> interpolate<S>(const ParamVector<S>&, const ParamVector<S>&, double);                     \
  template BarrierValue error_barrier<S>(const ParamVector<S>&, const ParamVector<S>&, const ModelSpec&,            \
                                         const Dataset&, const std::vector<double>&, BarrierSurface);               \
  template std::vector<BarrierCurve> spawn_barriers<S>(const ModelSpec&, const Dataset&, const TrainConfig&,         \
                                                       const SpawnSettings&);

DATADIET_INSTANTIATE(float)
DATADIET_INSTANTIATE(double)
#undef DATADIET_INSTANTIATE

}  // namespace datadiet
