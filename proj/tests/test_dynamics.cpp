#include "testing.hpp"

#include "datadiet/dynamics.hpp"
#include "datadiet/errors.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

using namespace datadiet;
using namespace datadiet::testing;

namespace {

GramMatrix gram_of(MatrixX<double> values) {
  GramMatrix g;
  g.values = std::move(values);
  g.ids = {0};
  return g;
}

TrainConfig short_config(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.decay_epochs = {};
  c.checkpoint_epochs = {};
  c.init_seed = 1;
  c.data_seed = 2;
  return c;
}

}  // namespace

TEST(Gram, LinearModelClosedForm) {
  std::mt19937_64 rng(31);
  const auto data = small_dataset(5, 3, 4);
  const auto spec = linear_spec(4, 3);
  const auto params = random_params<double>(spec, rng);
  const auto g = ntk_gram(params, spec, data, {0, 2, 4});
  ASSERT_EQ(g.values.rows(), 9);
  const std::size_t idx[] = {0, 2, 4};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double dot = data.inputs.col(Index(idx[i])).cast<double>().dot(data.inputs.col(Index(idx[j])).cast<double>()) + 1;
      for (int k = 0; k < 3; ++k) {
        for (int l = 0; l < 3; ++l) {
          EXPECT_NEAR(g.values(i * 3 + k, j * 3 + l), k == l ? dot : 0.0, 1e-12);
        }
      }
    }
  }
  EXPECT_EQ(g.ids, (std::vector<ExampleId>{0, 2, 4}));
}

TEST(Gram, SymmetricPsdAndDuplicatedBlocks) {
  std::mt19937_64 rng(32);
  const auto data = small_dataset(6, 3, 4);
  const auto spec = mlp_spec({4, 7, 3});
  const auto params = random_params<double>(spec, rng);
  const auto g = ntk_gram(params, spec, data, {1, 3, 1});
  EXPECT_EQ((g.values - g.values.transpose()).cwiseAbs().maxCoeff(), 0.0);
  const Eigen::SelfAdjointEigenSolver<MatrixX<double>> eig(g.values);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-6 * eig.eigenvalues().maxCoeff());
  EXPECT_EQ(g.values.block(0, 0, 9, 3), g.values.block(0, 6, 9, 3));
}

TEST(Gram, ResourceLimitNamesElementCount) {
  const auto data = small_dataset(10, 3, 4);
  const auto spec = linear_spec(4, 3);
  try {
    ntk_gram(zero_params<double>(spec), spec, data, {0, 1, 2}, 0, 10);
    FAIL() << "expected ResourceError";
  } catch (const ResourceError& e) {
    EXPECT_NE(std::string(e.what()).find("135"), std::string::npos) << e.what();
  }
}

TEST(Velocity, Algebra) {
  std::mt19937_64 rng(33);
  MatrixX<double> a(4, 4);
  for (Index i = 0; i < 16; ++i) a(i) = std::normal_distribution<double>()(rng);
  a = (a * a.transpose()).eval();
  const auto ka = gram_of(a);
  EXPECT_EQ(kernel_velocity(ka, ka), 0.0);
  for (double c : {0.5, 2.0, 10.0}) EXPECT_NEAR(kernel_velocity(ka, gram_of(c * a)), 0.0, 1e-12) << c;
  MatrixX<double> upper = MatrixX<double>::Zero(4, 4), lower = MatrixX<double>::Zero(4, 4);
  upper.topLeftCorner(2, 2) = a.topLeftCorner(2, 2);
  lower.bottomRightCorner(2, 2) = a.bottomRightCorner(2, 2);
  EXPECT_NEAR(kernel_velocity(gram_of(upper), gram_of(lower)), 1.0, 1e-12);
  EXPECT_NEAR(kernel_velocity(gram_of(a), gram_of(-a)), 2.0, 1e-12);
  const auto kb = gram_of(a + MatrixX<double>::Identity(4, 4));
  EXPECT_EQ(kernel_velocity(ka, kb), kernel_velocity(kb, ka));
  EXPECT_THROW(kernel_velocity(ka, gram_of(MatrixX<double>::Zero(4, 4))), UndefinedError);
  EXPECT_THROW(kernel_velocity(ka, gram_of(MatrixX<double>::Zero(3, 3))), ShapeError);
}

TEST(Velocity, ConstantTrajectoryIsZero) {
  const auto data = small_dataset(30, 3, 4);
  const auto spec = mlp_spec({4, 5, 3});
  auto cfg = short_config(2);
  cfg.learning_rate = 0.0;
  cfg.checkpoint_epochs = {0, 1};
  const auto run = train<double>(spec, data, cfg);
  const auto scores = el2n_single(run.at_epoch(0).state.params, spec, data);
  const auto points = velocity_profile(run.at_epoch(0), run.at_epoch(1), data, scores, 10, bucket_starts(30, 10, 10));
  ASSERT_EQ(points.size(), 3u);
  for (const auto& p : points) EXPECT_EQ(p.velocity, 0.0);
  EXPECT_THROW(velocity_profile(run.at_epoch(0), run.at_epoch(0), data, scores, 10, {0}), ConfigError);
}

TEST(Velocity, BucketsFollowScoreOrder) {
  const auto data = small_dataset(8, 3, 4);
  ScoreTable t;
  t.ids = data.ids;
  t.values = {5, 1, 1, 0, 7, 2, 2, 9};
  const auto order = score_order(t, data);
  EXPECT_EQ(order, (std::vector<std::size_t>{3, 1, 2, 5, 6, 0, 4, 7}));
  EXPECT_EQ(bucket_starts(10, 4, 3), (std::vector<std::size_t>{0, 3, 6}));
}

TEST(Interpolate, Endpoints) {
  std::mt19937_64 rng(34);
  const auto spec = mlp_spec({3, 4, 2});
  const auto w = random_params<float>(spec, rng);
  const auto v = random_params<float>(spec, rng);
  EXPECT_EQ(interpolate(w, v, 1.0).values, w.values);
  EXPECT_EQ(interpolate(w, v, 0.0).values, v.values);
  auto neg = w;
  neg.values = -w.values;
  EXPECT_EQ(interpolate(w, neg, 0.5).values.cwiseAbs().maxCoeff(), 0.0f);
  const auto other = zero_params<float>(linear_spec(3, 2));
  EXPECT_THROW(interpolate(w, other, 0.5), ShapeError);
}

TEST(Barrier, IdenticalWeightsGiveZero) {
  std::mt19937_64 rng(35);
  const auto data = small_dataset(40, 3, 4);
  const auto spec = mlp_spec({4, 6, 3});
  const auto w = random_params<double>(spec, rng);
  const auto b = error_barrier(w, w, spec, data, default_alpha_grid());
  EXPECT_EQ(b.barrier, 0.0);
  for (double d : b.deviations) EXPECT_EQ(d, 0.0);
  EXPECT_THROW(error_barrier(w, w, spec, take_subset(data, {}), default_alpha_grid()), ConfigError);
  EXPECT_THROW(error_barrier(w, w, spec, data, {0.0, 0.5}), ConfigError);
}

TEST(Barrier, LinearModelLossIsConvex) {
  const auto data = small_dataset(200, 4, 6);
  const auto spec = linear_spec(6, 4);
  for (std::uint64_t s = 0; s < 3; ++s) {
    auto c1 = short_config(3);
    c1.init_seed = 10 + s;
    auto c2 = short_config(3);
    c2.init_seed = 20 + s;
    c2.data_seed = 30 + s;
    const auto a = train<double>(spec, data, c1).final().state.params;
    const auto b = train<double>(spec, data, c2).final().state.params;
    const auto barrier = error_barrier(a, b, spec, data, default_alpha_grid(), BarrierSurface::loss);
    EXPECT_LE(barrier.barrier, 1e-6);
    EXPECT_GE(barrier.barrier, 0.0);
  }
}

TEST(Barrier, SymmetricOnSymmetricGrid) {
  std::mt19937_64 rng(36);
  const auto data = small_dataset(60, 3, 4);
  const auto spec = mlp_spec({4, 8, 3});
  const auto a = random_params<double>(spec, rng, 1.0);
  const auto b = random_params<double>(spec, rng, 1.0);
  const auto ab = error_barrier(a, b, spec, data, default_alpha_grid(), BarrierSurface::loss);
  const auto ba = error_barrier(b, a, spec, data, default_alpha_grid(), BarrierSurface::loss);
  EXPECT_NEAR(ab.barrier, ba.barrier, 1e-9);
}

TEST(Spawn, FinalEpochSpawnHasNoBarrier) {
  const auto data = small_dataset(60, 3, 4);
  const auto spec = mlp_spec({4, 6, 3});
  SpawnSettings settings;
  settings.spawn_epochs = {0, 3};
  settings.score_epoch = 1;
  settings.subset_size = 10;
  settings.n_pairs = 2;
  const auto curves = spawn_barriers<float>(spec, data, short_config(3), settings);
  ASSERT_EQ(curves.size(), 6u);
  for (const auto& c : curves) {
    EXPECT_EQ(c.subset_size, 10u);
    EXPECT_EQ(c.pair_barriers.size(), 2u);
    if (c.spawn_epoch == 3) {
      for (double b : c.pair_barriers) EXPECT_EQ(b, 0.0);
    }
    for (double b : c.pair_barriers) EXPECT_GE(b, 0.0);
  }
  EXPECT_EQ(barrier_csv(curves, "d", 0), barrier_csv(spawn_barriers<float>(spec, data, short_config(3), settings), "d", 0));
}

TEST(Spawn, ChildrenStartFromParentWeights) {
  const auto data = small_dataset(40, 3, 4);
  const auto spec = linear_spec(4, 3);
  auto cfg = short_config(4);
  cfg.checkpoint_epochs = {2};
  const auto parent = train<float>(spec, data, cfg);
  const auto& branch = parent.at_epoch(2);
  auto child_cfg = cfg;
  child_cfg.data_seed = 77;
  child_cfg.epochs = 2;
  // Resuming with zero remaining epochs returns the branch weights unchanged.
  const auto idle = resume_training(branch, data, child_cfg);
  EXPECT_EQ(idle.final().state.params.values, branch.state.params.values);
  child_cfg.epochs = 4;
  EXPECT_NE(resume_training(branch, data, child_cfg).final().state.params.values,
            parent.final().state.params.values);
}
