#include "testing.hpp"

#include "datadiet/errors.hpp"
#include "datadiet/scores.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace datadiet;
using namespace datadiet::testing;

namespace {

ScoreTable table(ScoreKind kind, std::vector<ExampleId> ids, std::vector<double> values) {
  ScoreTable t;
  t.kind = kind;
  t.ids = std::move(ids);
  t.values = std::move(values);
  return t;
}

PresentationLog log_of(const std::vector<std::vector<bool>>& rows) {
  PresentationLog log;
  log.steps_per_epoch = 1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    log.ids.push_back(static_cast<ExampleId>(i));
    log.entries.emplace_back();
    for (std::size_t s = 0; s < rows[i].size(); ++s) {
      log.entries.back().push_back({static_cast<std::int64_t>(s), rows[i][s]});
    }
  }
  return log;
}

// Plain Pearson on given vectors.
double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(El2n, ClosedForms) {
  const auto data = small_dataset(20, 10, 4);
  const auto spec = linear_spec(4, 10);
  const auto uniform = el2n_single(zero_params<double>(spec), spec, data);
  for (double v : uniform.values) EXPECT_NEAR(v, std::sqrt(0.9), 1e-12);

  // A huge bias on class 0 gives an exactly one-hot prediction.
  auto confident = zero_params<double>(spec);
  detail::tensor(confident.values, confident.layout[1])(0, 0) = 1000.0;
  const auto perfect = el2n_single(confident, spec, data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_NEAR(perfect.values[i], data.labels[i] == 0 ? 0.0 : std::sqrt(2.0), 1e-12);
  }
}

TEST(El2n, ArithmeticExample) {
  VectorX<double> p(3);
  p << 0.7, 0.2, 0.1;
  EXPECT_NEAR((p - one_hot<double>(0, 3)).norm(), std::sqrt(0.14), 1e-15);
}

TEST(Grand, LinearClosedFormAndOrderInvariance) {
  std::mt19937_64 rng(21);
  const auto data = small_dataset(30, 4, 5);
  const auto spec = linear_spec(5, 4);
  const auto params = random_params<double>(spec, rng);
  const auto scores = grand_single(params, spec, data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const VectorX<double> x = data.inputs.col(static_cast<Index>(i)).cast<double>();
    const VectorX<double> err = softmax(forward(params, spec, x)) - one_hot<double>(data.labels[i], 4);
    EXPECT_NEAR(scores.values[i], err.norm() * std::sqrt(x.squaredNorm() + 1), 1e-12);
  }
  std::vector<ExampleId> reversed(data.ids.rbegin(), data.ids.rend());
  const auto flipped = grand_single(params, spec, take_subset(data, reversed));
  EXPECT_EQ(flipped.aligned_to(data.ids), scores.values);
}

TEST(Average, PointwiseMean) {
  const auto a = table(ScoreKind::el2n, {5}, {0.2});
  const auto b = table(ScoreKind::el2n, {5}, {0.4});
  EXPECT_NEAR(average_scores({a, b}).values[0], 0.3, 1e-15);
  EXPECT_EQ(average_scores({a}).values, a.values);
}

TEST(Average, RejectsMismatch) {
  const auto a = table(ScoreKind::el2n, {1, 2}, {0.2, 0.1});
  EXPECT_THROW(average_scores({a, table(ScoreKind::grand, {1, 2}, {0.2, 0.1})}), AggregationError);
  EXPECT_THROW(average_scores({a, table(ScoreKind::el2n, {1, 3}, {0.2, 0.1})}), AggregationError);
  auto shifted = a;
  shifted.epoch = 3;
  EXPECT_THROW(average_scores({a, shifted}), AggregationError);
  EXPECT_THROW(average_scores({}), AggregationError);
}

TEST(Average, ForgetSentinelsNeedDedicatedAverage) {
  const auto never = forgetting_scores(log_of({{true, false}, {false, false}}), 2);
  EXPECT_THROW(average_scores({never, never}), AggregationError);
  const auto other = forgetting_scores(log_of({{true, true}, {true, false}}), 2);
  const auto avg = average_forgetting({never, other});
  EXPECT_DOUBLE_EQ(avg.values[0], 0.5);
  EXPECT_TRUE(avg.never_learned[1]);
  EXPECT_GT(avg.values[1], avg.values[0]);
}

TEST(Forgetting, CountsTransitions) {
  const auto t = forgetting_scores(log_of({{true, false, true, false},
                                           {true, true, true, true},
                                           {false, false, false, false},
                                           {false, true, true, false}}),
                                   4);
  EXPECT_EQ(t.values[0], 2);
  EXPECT_EQ(t.values[1], 0);
  EXPECT_TRUE(t.never_learned[2]);
  EXPECT_EQ(t.values[2], 3);  // max finite + 1
  EXPECT_EQ(t.values[3], 1);
  EXPECT_TRUE(t.has_sentinel());
}

TEST(Forgetting, IncompleteLogIsAggregationError) {
  auto log = log_of({{true, false, true}});
  EXPECT_THROW(forgetting_scores(log, 4), AggregationError);
}

TEST(Spearman, KnownValues) {
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{2, 1, 3}), 0.5, 1e-15);
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{4, 3, 2, 1}), -1.0, 1e-15);
  EXPECT_NEAR(spearman(std::vector<double>{0.1, 5, 2}, std::vector<double>{0.1, 5, 2}), 1.0, 1e-15);
  EXPECT_THROW(spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), UndefinedError);
  EXPECT_THROW(spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2}), AggregationError);
}

TEST(Spearman, MatchesPearsonOfMidRanks) {
  const std::vector<double> a{3, 1, 4, 1, 5, 9, 2, 6}, b{2, 7, 1, 8, 2, 8, 1, 8};
  EXPECT_EQ(mid_ranks({10, 20, 20, 30}), (std::vector<double>{1, 2.5, 2.5, 4}));
  EXPECT_NEAR(spearman(a, b), pearson(mid_ranks(a), mid_ranks(b)), 1e-14);
}

TEST(Spearman, TablesAlignById) {
  const auto a = table(ScoreKind::el2n, {1, 2, 3}, {0.1, 0.2, 0.3});
  const auto b = table(ScoreKind::grand, {3, 1, 2}, {3, 1, 2});
  EXPECT_NEAR(spearman(a, b), 1.0, 1e-15);
  EXPECT_THROW(spearman(a, table(ScoreKind::grand, {1, 2, 4}, {1, 2, 3})), LookupError);
}

TEST(ScoreRuns, EpochZeroAveragesInitializations) {
  const auto data = small_dataset(40, 3, 4);
  const auto spec = mlp_spec({4, 6, 3});
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.decay_epochs = {};
  const auto seeds = run_seed_list(9, kScoreSeedStream, 4);
  const auto avg = score_over_runs<double>(spec, data, cfg, ScoreKind::grand, 0, seeds);
  std::vector<double> expected(data.size(), 0.0);
  for (const auto& s : seeds) {
    const auto single = grand_single(init_params<double>(spec, s.init), spec, data);
    for (std::size_t i = 0; i < data.size(); ++i) expected[i] += single.values[i] / 4.0;
  }
  for (std::size_t i = 0; i < data.size(); ++i) EXPECT_NEAR(avg.values[i], expected[i], 1e-12);
  EXPECT_EQ(avg.seeds, seeds);
}

TEST(ScoreRuns, SingleRunMatchesCheckpointAndIsDeterministic) {
  const auto data = small_dataset(40, 3, 4);
  const auto spec = mlp_spec({4, 6, 3});
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.decay_epochs = {};
  const auto seeds = run_seed_list(2, kScoreSeedStream, 1);
  const auto one = score_over_runs<float>(spec, data, cfg, ScoreKind::el2n, 2, seeds);
  auto run_cfg = cfg.with_seeds(seeds[0]);
  run_cfg.checkpoint_epochs = {2};
  const auto run = train<float>(spec, data, run_cfg);
  EXPECT_EQ(one.values, el2n_single(run.at_epoch(2).state.params, spec, data).values);
  const auto again = score_over_runs<float>(spec, data, cfg, ScoreKind::el2n, 2, seeds, {2});
  EXPECT_EQ(again.values, one.values);
}

TEST(ScoreRuns, ForgetTrainsToCompletion) {
  const auto data = small_dataset(40, 3, 4);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.decay_epochs = {};
  const auto t = score_over_runs<float>(linear_spec(4, 3), data, cfg, ScoreKind::forget, 0,
                                        run_seed_list(1, kScoreSeedStream, 2));
  EXPECT_EQ(t.kind, ScoreKind::forget);
  EXPECT_EQ(t.size(), data.size());
  for (double v : t.values) EXPECT_GE(v, 0.0);
}

TEST(ScoreRuns, SeedStreamsAreDistinct) {
  const auto a = run_seed_list(0, kScoreSeedStream, 3);
  const auto b = run_seed_list(0, kRetrainSeedStream, 3);
  EXPECT_EQ(a, run_seed_list(0, kScoreSeedStream, 3));
  EXPECT_NE(a[0], a[1]);
  EXPECT_NE(a[0], b[0]);
  EXPECT_NE(a[0].init, a[0].data);
}

TEST(ScoreFiles, RoundTripWithSidecar) {
  TempDir dir;
  auto t = table(ScoreKind::grand, {4, 2, 9}, {0.125, 1.0 / 3.0, 2.5});
  t.epoch = 4;
  t.seeds = {{1, 2}};
  save_scores(dir / "g.csv", t, "abc", 7);
  const auto back = load_scores(dir / "g.csv");
  EXPECT_EQ(back.kind, ScoreKind::grand);
  EXPECT_EQ(back.epoch, 4);
  EXPECT_EQ(back.ids, t.ids);
  EXPECT_EQ(back.values, t.values);
  EXPECT_EQ(back.seeds, t.seeds);
  std::filesystem::remove(dir / "g.csv.json");
  EXPECT_EQ(load_scores(dir / "g.csv").kind, ScoreKind::external);
  EXPECT_THROW(load_scores(dir / "missing.csv"), ArtifactError);
}
