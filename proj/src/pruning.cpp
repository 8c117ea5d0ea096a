#include "datadiet/pruning.hpp"

#include "datadiet/errors.hpp"
#include "datadiet/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace datadiet {

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::keep_top:
      return "keep-top";
    case PolicyKind::sliding_window:
      return "sliding-window";
    case PolicyKind::random:
      return "random";
  }
  return "unknown";
}

PolicyKind policy_kind_from_string(const std::string& name) {
  if (name == "keep-top") return PolicyKind::keep_top;
  if (name == "sliding-window" || name == "window") return PolicyKind::sliding_window;
  if (name == "random") return PolicyKind::random;
  throw ConfigError("unknown selection policy '" + name + "'");
}

void SelectionPolicy::validate() const {
  if (!(fraction > 0 && fraction <= 1)) throw ConfigError("kept fraction must lie in (0,1]");
  if (!(offset >= 0 && offset < 1)) throw ConfigError("window offset must lie in [0,1)");
  if (kind == PolicyKind::sliding_window && offset + fraction > 1 + 1e-12) {
    throw ConfigError("window offset + fraction exceeds 1");
  }
}

std::vector<ExampleId> select(const ScoreTable& scores, const SelectionPolicy& policy, std::size_t n) {
  policy.validate();
  if (scores.size() != n) {
    throw LookupError("score table covers " + std::to_string(scores.size()) + " ids, expected " + std::to_string(n));
  }
  const auto keep = static_cast<std::size_t>(std::llround(policy.fraction * static_cast<double>(n)));
  if (keep == 0) throw ConfigError("selection keeps no examples");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<ExampleId> kept;
  kept.reserve(keep);
  switch (policy.kind) {
    case PolicyKind::random: {
      std::mt19937_64 rng(mix_seed(policy.seed));
      for (std::size_t i = 0; i < keep; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(order[i], order[pick(rng)]);
      }
      for (std::size_t i = 0; i < keep; ++i) kept.push_back(scores.ids[order[i]]);
      break;
    }
    case PolicyKind::keep_top:
    case PolicyKind::sliding_window: {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores.values[a] != scores.values[b]) return scores.values[a] < scores.values[b];
        return scores.ids[a] < scores.ids[b];
      });
      const std::size_t skip = policy.kind == PolicyKind::keep_top
                                   ? n - keep
                                   : static_cast<std::size_t>(std::llround(policy.offset * static_cast<double>(n)));
      if (skip + keep > n) throw ConfigError("window extends past the highest score");
      for (std::size_t i = skip; i < skip + keep; ++i) kept.push_back(scores.ids[order[i]]);
      break;
    }
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

ScoreTable uniform_scores(const Dataset& data) {
  ScoreTable t;
  t.kind = ScoreKind::external;
  t.ids = data.ids;
  t.values.assign(data.size(), 0.0);
  return t;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

template <typename Scalar>
PruneResult prune_and_retrain(const ModelSpec& spec, const Dataset& data, const Dataset& test,
                              const TrainConfig& config, const ScoreTable& scores, const SelectionPolicy& policy,
                              const std::vector<RunSeeds>& retrain_seeds, const RetrainOptions& options) {
  if (retrain_seeds.empty()) throw ConfigError("need at least one retrain");
  PruneResult result;
  result.policy = policy;
  result.score_kind = policy.kind == PolicyKind::random ? "none" : to_string(scores.kind);
  result.score_epoch = policy.kind == PolicyKind::random ? 0 : scores.epoch;
  if (policy.kind != PolicyKind::random) result.score_seeds = scores.seeds;
  result.kept = select(scores, policy, data.size());
  result.retrain_seeds = retrain_seeds;

  const Dataset subset = take_subset(data, result.kept);
  TrainConfig base = config;
  base.reference_size = config.reference_size ? config.reference_size : data.size();
  base.checkpoint_epochs.clear();

  result.test_accuracy.assign(retrain_seeds.size(), 0.0);
  result.final_train_loss.assign(retrain_seeds.size(), 0.0);
  parallel_for(retrain_seeds.size(), options.jobs, [&](std::size_t r) {
    const auto run = train<Scalar>(spec, subset, base.with_seeds(retrain_seeds[r]));
    const auto& params = run.final().state.params;
    result.test_accuracy[r] = evaluate(params, spec, test).accuracy;
    result.final_train_loss[r] = evaluate(params, spec, subset).mean_loss;
  });
  result.mean_accuracy = std::accumulate(result.test_accuracy.begin(), result.test_accuracy.end(), 0.0) /
                         static_cast<double>(result.test_accuracy.size());
  result.p16_accuracy = percentile(result.test_accuracy, 0.16);
  result.p84_accuracy = percentile(result.test_accuracy, 0.84);
  return result;
}

template <typename Scalar>
std::vector<PruneResult> sweep_fraction(const ModelSpec& spec, const Dataset& data, const Dataset& test,
                                        const TrainConfig& config, const std::vector<ScoreTable>& sources,
                                        const std::vector<double>& fractions, int n_retrains,
                                        std::uint64_t master_seed, const RetrainOptions& options) {
  const auto retrain_seeds = run_seed_list(master_seed, kRetrainSeedStream, n_retrains);
  const auto baseline_scores = uniform_scores(data);
  std::vector<PruneResult> results;
  for (std::size_t f = 0; f < fractions.size(); ++f) {
    for (const auto& source : sources) {
      SelectionPolicy policy{PolicyKind::keep_top, fractions[f], 0.0, 0};
      results.push_back(prune_and_retrain<Scalar>(spec, data, test, config, source, policy, retrain_seeds, options));
    }
    SelectionPolicy random{PolicyKind::random, fractions[f], 0.0, derive_seed(master_seed, kSelectionSeedStream, f)};
    results.push_back(
        prune_and_retrain<Scalar>(spec, data, test, config, baseline_scores, random, retrain_seeds, options));
  }
  return results;
}

template <typename Scalar>
std::vector<PruneResult> sweep_window(const ModelSpec& spec, const Dataset& data, const Dataset& test,
                                      const TrainConfig& config, const ScoreTable& scores,
                                      const std::vector<double>& offsets, double fraction, int n_retrains,
                                      std::uint64_t master_seed, const RetrainOptions& options) {
  const auto retrain_seeds = run_seed_list(master_seed, kRetrainSeedStream, n_retrains);
  std::vector<PruneResult> results;
  for (double offset : offsets) {
    SelectionPolicy policy{PolicyKind::sliding_window, fraction, offset, 0};
    results.push_back(prune_and_retrain<Scalar>(spec, data, test, config, scores, policy, retrain_seeds, options));
  }
  return results;
}

std::string results_csv(const std::vector<PruneResult>& results, const std::string& config_digest,
                        std::uint64_t master_seed) {
  std::ostringstream out;
  out << provenance_comment(config_digest, master_seed);
  out << "score_kind,score_epoch,policy,fraction,offset,retrain_seed,test_accuracy,final_train_loss\n";
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.retrain_seeds.size(); ++i) {
      out << r.score_kind << ',' << r.score_epoch << ',' << to_string(r.policy.kind) << ','
          << format_double(r.policy.fraction) << ',' << format_double(r.policy.offset) << ','
          << r.retrain_seeds[i].init << ',' << format_double(r.test_accuracy[i]) << ','
          << format_double(r.final_train_loss[i]) << '\n';
    }
  }
  return out.str();
}

Json results_summary(const std::vector<PruneResult>& results, const std::string& config_digest,
                     std::uint64_t master_seed) {
  Json cells = Json::array();
  for (const auto& r : results) {
    cells.push_back({{"score_kind", r.score_kind},
                     {"score_epoch", r.score_epoch},
                     {"policy", to_string(r.policy.kind)},
                     {"fraction", r.policy.fraction},
                     {"offset", r.policy.offset},
                     {"kept", r.kept.size()},
                     {"mean_test_accuracy", r.mean_accuracy},
                     {"p16_test_accuracy", r.p16_accuracy},
                     {"p84_test_accuracy", r.p84_accuracy}});
  }
  return Json{{"config_digest", config_digest}, {"master_seed", master_seed}, {"cells", cells}};
}

#define DATADIET_INSTANTIATE(S)                                                                                   \
  template PruneResult prune_and_retrain<S>(const ModelSpec&, const Dataset&, const Dataset&, const TrainConfig&, \
                                            const ScoreTable&, const SelectionPolicy&, const std::vector<RunSeeds>&, \
                                            const RetrainOptions&);                                               \
  template std::vector<PruneResult> sweep_fraction<S>(const ModelSpec&, const Dataset&, const Dataset&,           \
                                                      const TrainConfig&, const std::vector<ScoreTable>&,         \
                                                      const std::vector<double>&, int, std::uint64_t,             \
                                                      const RetrainOptions&);                                     \
  template std::vector<PruneResult> sweep_window<S>(const ModelSpec&, const Dataset&, const Dataset&,             \
                                                    const TrainConfig&, const ScoreTable&,                        \
                                                    const std::vector<double>&, double, int, std::uint64_t,       \
                                                    const RetrainOptions&);

DATADIET_INSTANTIATE(float)
DATADIET_INSTANTIATE(double)
#undef DATADIET_INSTANTIATE

}  // namespace datadiet
