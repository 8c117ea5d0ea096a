#include "testing.hpp"

#include "datadiet/errors.hpp"
#include "datadiet/pruning.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

using namespace datadiet;
using namespace datadiet::testing;

namespace {

// Scores with distinct values in scrambled id order.
ScoreTable scrambled(std::size_t n) {
  ScoreTable t;
  for (std::size_t i = 0; i < n; ++i) {
    t.ids.push_back(static_cast<ExampleId>(100 + i));
    t.values.push_back(static_cast<double>((i * 7) % n));
  }
  return t;
}

// Oracle: explicit sort of (score, id) pairs, then positions [begin, end).
std::vector<ExampleId> by_rank(const ScoreTable& t, std::size_t begin, std::size_t end) {
  std::vector<std::pair<double, ExampleId>> rows;
  for (std::size_t i = 0; i < t.size(); ++i) rows.emplace_back(t.values[i], t.ids[i]);
  std::sort(rows.begin(), rows.end());
  std::vector<ExampleId> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(rows[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(Select, KeepTopTakesLargestScores) {
  const auto t = scrambled(10);
  EXPECT_EQ(select(t, {PolicyKind::keep_top, 0.3, 0, 0}, 10), by_rank(t, 7, 10));
}

TEST(Select, WindowEnumeration) {
  const auto t = scrambled(10);
  EXPECT_EQ(select(t, {PolicyKind::sliding_window, 0.4, 0.2, 0}, 10), by_rank(t, 2, 6));
  EXPECT_EQ(select(t, {PolicyKind::sliding_window, 0.5, 0.0, 0}, 10), by_rank(t, 0, 5));
  const auto all = select(t, {PolicyKind::sliding_window, 1.0, 0.0, 0}, 10);
  EXPECT_EQ(all.size(), 10u);
  for (std::size_t n : {7u, 13u, 50u}) {
    const auto s = scrambled(n);
    for (double off : {0.0, 0.1, 0.3}) {
      const auto skip = static_cast<std::size_t>(std::llround(off * n));
      const auto keep = static_cast<std::size_t>(std::llround(0.4 * n));
      EXPECT_EQ(select(s, {PolicyKind::sliding_window, 0.4, off, 0}, n), by_rank(s, skip, skip + keep));
    }
  }
}

TEST(Select, TiesBrokenById) {
  ScoreTable t;
  t.ids = {5, 3, 9, 1};
  t.values = {1.0, 1.0, 1.0, 1.0};
  EXPECT_EQ(select(t, {PolicyKind::keep_top, 0.5, 0, 0}, 4), (std::vector<ExampleId>{5, 9}));
  EXPECT_EQ(select(t, {PolicyKind::sliding_window, 0.5, 0, 0}, 4), (std::vector<ExampleId>{1, 3}));
}

TEST(Select, WindowAtZeroDiffersFromKeepTop) {
  const auto t = scrambled(20);
  const auto bottom = select(t, {PolicyKind::sliding_window, 0.5, 0, 0}, 20);
  const auto top = select(t, {PolicyKind::keep_top, 0.5, 0, 0}, 20);
  std::vector<ExampleId> both;
  std::set_intersection(bottom.begin(), bottom.end(), top.begin(), top.end(), std::back_inserter(both));
  EXPECT_TRUE(both.empty());
}

TEST(Select, WindowsAtDistinctOffsetsDiffer) {
  const auto t = scrambled(30);
  std::set<std::vector<ExampleId>> seen;
  for (int k = 0; k <= 10; ++k) seen.insert(select(t, {PolicyKind::sliding_window, 0.5, k / 30.0, 0}, 30));
  EXPECT_EQ(seen.size(), 11u);
}

TEST(Select, RandomIsSeededAndSized) {
  const auto t = scrambled(101);
  const auto a = select(t, {PolicyKind::random, 0.3, 0, 11}, 101);
  EXPECT_EQ(a.size(), 30u);
  EXPECT_EQ(a, select(t, {PolicyKind::random, 0.3, 0, 11}, 101));
  EXPECT_NE(a, select(t, {PolicyKind::random, 0.3, 0, 12}, 101));
  EXPECT_EQ(std::set<ExampleId>(a.begin(), a.end()).size(), a.size());
}

TEST(Select, Errors) {
  const auto t = scrambled(10);
  EXPECT_THROW(select(t, {PolicyKind::keep_top, 0.04, 0, 0}, 10), ConfigError);
  EXPECT_THROW(select(t, {PolicyKind::sliding_window, 0.5, 0.6, 0}, 10), ConfigError);
  EXPECT_THROW(select(t, {PolicyKind::keep_top, 1.5, 0, 0}, 10), ConfigError);
  EXPECT_THROW(select(t, {PolicyKind::keep_top, 0.5, 0, 0}, 11), LookupError);
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(percentile({1, 2}, 0.16), 1.16);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 2, 3}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 2, 3}, 1.0), 4.0);
}

TEST(Retrain, SweepShapeAndSharedBudget) {
  SyntheticTaskSpec s;
  s.num_classes = 3;
  s.dim = 4;
  s.train_size = 120;
  s.test_size = 60;
  const auto split = generate_synthetic(s);
  const auto spec = linear_spec(4, 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.decay_epochs = {};
  auto scores = uniform_scores(split.train);
  for (std::size_t i = 0; i < scores.size(); ++i) scores.values[i] = static_cast<double>(i % 17);
  scores.kind = ScoreKind::el2n;
  scores.epoch = 1;

  const auto results = sweep_fraction<float>(spec, split.train, split.test, cfg, {scores}, {0.5, 1.0}, 2, 5);
  ASSERT_EQ(results.size(), 4u);
  EXPECT_EQ(results[0].score_kind, "el2n");
  EXPECT_EQ(results[1].score_kind, "none");
  EXPECT_EQ(results[1].policy.kind, PolicyKind::random);
  EXPECT_EQ(results[0].kept.size(), 60u);
  EXPECT_EQ(results[2].kept.size(), 120u);
  // At f = 1 both policies train on the full set with the same seeds.
  EXPECT_EQ(results[2].test_accuracy, results[3].test_accuracy);
  EXPECT_EQ(results[0].retrain_seeds, results[1].retrain_seeds);

  const auto csv = results_csv(results, "d", 5);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2 + 4 * 2);
  EXPECT_EQ(results_csv(sweep_fraction<float>(spec, split.train, split.test, cfg, {scores}, {0.5, 1.0}, 2, 5), "d", 5),
            csv);
}

TEST(Retrain, WindowSweepPerOffset) {
  const auto data = small_dataset(80, 3, 4);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.decay_epochs = {};
  auto scores = uniform_scores(data);
  std::iota(scores.values.begin(), scores.values.end(), 0.0);
  const auto r = sweep_window<float>(linear_spec(4, 3), data, data, cfg, scores, {0.0, 0.25, 0.5}, 0.5, 1, 3);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].kept.front(), data.ids.front());
  EXPECT_EQ(r[2].kept.back(), data.ids.back());
  EXPECT_NE(r[0].kept, r[1].kept);
}
