#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "bmn/trainer.hpp"
#include "oracles.hpp"

using namespace bmn;
namespace fs = std::filesystem;

namespace {

Dataset small_dataset(std::size_t ids = 8, std::size_t images = 6, std::uint64_t seed = 7) {
  SyntheticSpec s;
  s.n_identities = ids;
  s.images_per_identity = images;
  s.seed = seed;
  return generate_synthetic(s);
}

ModelConfig small_model() {
  ModelConfig c;
  c.encoder_hidden = {24};
  return c;
}

TrainConfig quick_train(std::size_t iterations) {
  TrainConfig t;
  t.max_iterations = iterations;
  t.mining_warmup_steps = 10;
  t.mining_window = 512;
  t.hardest_window = 512;
  return t;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("bmn_trainer_" + name);
  fs::remove_all(dir);
  return dir;
}

ModelParams constant_like(const ModelParams& p, double value) {
  ModelParams g = p;
  for (std::size_t i = 0; i < g.layer_count(); ++i) {
    for (double& w : g.layer(i).weight.data()) w = value;
    for (double& b : g.layer(i).bias.data()) b = value;
  }
  return g;
}

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
  return std::accumulate(v.begin() + from, v.begin() + to, 0.0) / static_cast<double>(to - from);
}

}  // namespace

TEST(LrSchedule, StepDecayEveryFiveEpochs) {
  const TrainConfig c;
  EXPECT_DOUBLE_EQ(lr_at(c, 0), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(c, 4), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(c, 5), 0.01 * 0.98);
  EXPECT_NEAR(lr_at(c, 5), 0.0098, 1e-15);
  EXPECT_DOUBLE_EQ(lr_at(c, 12), 0.01 * 0.98 * 0.98);
}

TEST(AdamStep, FirstStepMovesByLearningRate) {
  ModelParams p = init_params(small_model());
  const ModelParams before = p;
  ModelParams g = constant_like(p, 0.0);
  g.metric[0].weight(0, 0) = 3.7;
  g.metric[0].bias(0, 0) = -0.2;
  OptimizerState s = OptimizerState::zeros_like(p);
  ASSERT_TRUE(adam_step(p, g, s, 0.01, 0.0));
  EXPECT_NEAR(p.metric[0].weight(0, 0) - before.metric[0].weight(0, 0), -0.01, 1e-8);
  EXPECT_NEAR(p.metric[0].bias(0, 0) - before.metric[0].bias(0, 0), 0.01, 1e-7);
  EXPECT_EQ(p.metric[0].weight(1, 0), before.metric[0].weight(1, 0));
  EXPECT_EQ(s.t, 1u);
}

TEST(AdamStep, HalfGradientFromZero) {
  ModelParams p = init_params(small_model());
  p.metric[2].weight(0, 0) = 0.0;
  ModelParams g = constant_like(p, 0.0);
  g.metric[2].weight(0, 0) = 0.5;
  OptimizerState s = OptimizerState::zeros_like(p);
  ASSERT_TRUE(adam_step(p, g, s, 0.01, 0.0));
  EXPECT_NEAR(p.metric[2].weight(0, 0), -0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
}

TEST(AdamStep, ZeroGradientNoDecayLeavesParams) {
  ModelParams p = init_params(small_model());
  const ModelParams before = p;
  OptimizerState s = OptimizerState::zeros_like(p);
  ASSERT_TRUE(adam_step(p, constant_like(p, 0.0), s, 0.01, 0.0));
  EXPECT_EQ(p, before);
}

TEST(AdamStep, DecoupledDecayShrinksWeightsOnly) {
  ModelParams p = init_params(small_model());
  p.encoder[0].bias(0, 0) = 0.5;
  const ModelParams before = p;
  OptimizerState s = OptimizerState::zeros_like(p);
  ASSERT_TRUE(adam_step(p, constant_like(p, 0.0), s, 0.01, 2e-4));
  for (std::size_t k = 0; k < p.encoder[0].weight.size(); ++k) {
    EXPECT_NEAR(p.encoder[0].weight[k], before.encoder[0].weight[k] * (1.0 - 0.01 * 2e-4), 1e-15);
  }
  EXPECT_EQ(p.encoder[0].bias, before.encoder[0].bias);
}

TEST(AdamStep, MatchesScalarReference) {
  ModelParams p = init_params(small_model());
  OptimizerState s = OptimizerState::zeros_like(p);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  double theta = p.metric[1].weight(2, 1), m = 0.0, v = 0.0;
  const double lr = 0.003, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 6; ++t) {
    ModelParams g = constant_like(p, 0.0);
    const double gk = n(rng);
    g.metric[1].weight(2, 1) = gk;
    ASSERT_TRUE(adam_step(p, g, s, lr, wd));
    m = b1 * m + (1 - b1) * gk;
    v = b2 * v + (1 - b2) * gk * gk;
    const double mhat = m / (1 - std::pow(b1, t)), vhat = v / (1 - std::pow(b2, t));
    theta = theta - lr * mhat / (std::sqrt(vhat) + eps) - lr * wd * theta;
    EXPECT_NEAR(p.metric[1].weight(2, 1), theta, 1e-12) << "t=" << t;
  }
}

TEST(AdamStep, NonFiniteGradientSkipsUpdate) {
  ModelParams p = init_params(small_model());
  const ModelParams before = p;
  ModelParams g = constant_like(p, 1.0);
  g.metric[3].bias(0, 0) = std::nan("");
  OptimizerState s = OptimizerState::zeros_like(p);
  EXPECT_FALSE(adam_step(p, g, s, 0.01, 2e-4));
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.t, 0u);
}

TEST(AdamStep, LayoutMismatch) {
  ModelParams p = init_params(small_model());
  ModelParams g = constant_like(p, 0.0);
  g.metric.pop_back();
  OptimizerState s = OptimizerState::zeros_like(p);
  EXPECT_THROW(adam_step(p, g, s, 0.01, 0.0), ShapeError);
  g = constant_like(p, 0.0);
  g.metric[0].bias = Matrix(1, 3);
  EXPECT_THROW(adam_step(p, g, s, 0.01, 0.0), ShapeError);
}

TEST(Train, SameSeedSameParameters) {
  const Dataset ds = small_dataset();
  const auto a = train(ds, small_model(), TargetSpec{}, quick_train(40));
  const auto b = train(ds, small_model(), TargetSpec{}, quick_train(40));
  EXPECT_EQ(a.checkpoint.params, b.checkpoint.params);
  EXPECT_EQ(a.log.size(), 40u);
  EXPECT_EQ(a.checkpoint.step, 40u);
  TrainConfig other = quick_train(40);
  other.seed = 2;
  EXPECT_NE(train(ds, small_model(), TargetSpec{}, other).checkpoint.params, a.checkpoint.params);
}

TEST(Train, ZeroIterationsReturnsInitialParameters) {
  const Dataset ds = small_dataset();
  const ModelParams init = init_params(small_model());
  TrainOptions opts;
  opts.initial = &init;
  const auto r = train(ds, small_model(), TargetSpec{}, quick_train(0), opts);
  EXPECT_EQ(r.checkpoint.params, init);
  EXPECT_EQ(r.checkpoint.step, 0u);
  EXPECT_TRUE(r.log.empty());
}

TEST(Train, LossFallsOnSmallProblem) {
  const Dataset ds = small_dataset(10, 10);
  ModelConfig m = small_model();
  m.encoder_hidden = {};
  TrainConfig t = quick_train(400);
  t.lr0 = 0.001;
  t.mining_warmup_steps = 200;
  const auto r = train(ds, m, TargetSpec{}, t);
  ASSERT_GE(r.log.size(), 100u);
  std::vector<double> loss;
  for (const auto& row : r.log) loss.push_back(row.total);
  const std::size_t decile = loss.size() / 10;
  EXPECT_LT(mean_of(loss, loss.size() - decile, loss.size()), mean_of(loss, 0, decile));
}

TEST(Train, TwoIdentityDefaultsLossFalls) {
  const Dataset ds = small_dataset(2, 20);
  TrainConfig t;
  t.max_iterations = 200;
  const auto r = train(ds, ModelConfig{}, TargetSpec{}, t);
  ASSERT_EQ(r.log.size(), 200u);
  std::vector<double> loss;
  for (const auto& row : r.log) loss.push_back(row.total);
  EXPECT_LT(mean_of(loss, 180, 200), mean_of(loss, 0, 20));
}

TEST(Train, WarmupStepsReportNoDiscards) {
  const Dataset ds = small_dataset();
  TrainConfig t = quick_train(30);
  t.mining_warmup_steps = 30;
  const auto r = train(ds, small_model(), TargetSpec{}, t);
  for (const auto& row : r.log) EXPECT_EQ(row.discards, 0u);
  EXPECT_EQ(r.total_discards, 0u);
}

TEST(Train, RejectsSingleIdentity) {
  const Dataset ds = small_dataset(1, 10);
  EXPECT_THROW(train(ds, small_model(), TargetSpec{}, quick_train(5)), DatasetInsufficientError);
  TrainOptions opts;
  opts.identities = {3};
  EXPECT_THROW(train(small_dataset(), small_model(), TargetSpec{}, quick_train(5), opts), DatasetInsufficientError);
}

TEST(Train, RejectsInconsistentConfiguration) {
  const Dataset ds = small_dataset();
  ModelConfig wide = small_model();
  wide.input_dim = 17;
  EXPECT_THROW(train(ds, wide, TargetSpec{}, quick_train(5)), ConfigError);
  TargetSpec t2;
  t2.p = 2;
  EXPECT_THROW(train(ds, small_model(), t2, quick_train(5)), ConfigError);
  TargetSpec unequal;
  unequal.sigma_n = 2.0;
  EXPECT_THROW(train(ds, small_model(), unequal, quick_train(5)), ConfigError);
  TrainConfig odd = quick_train(5);
  odd.b = 7;
  EXPECT_THROW(train(ds, small_model(), TargetSpec{}, odd), ConfigError);
}

// With the output projection at zero nothing matching is difficult, so strict mining never fills a batch.
TEST(Train, StrictMiningFromScratchStalls) {
  const Dataset ds = small_dataset();
  TrainConfig t = quick_train(20);
  t.mining_warmup_steps = 0;
  t.hardest_window = 0;
  EXPECT_THROW(train(ds, small_model(), TargetSpec{}, t), MiningStalledError);
}

TEST(Train, StallAfterWarmupStopsEarly) {
  const Dataset ds = small_dataset();
  TrainConfig t = quick_train(500);
  t.mining_warmup_steps = 3;
  t.hardest_window = 0;
  t.lr0 = 1e-6;
  const auto r = train(ds, small_model(), TargetSpec{}, t);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.checkpoint.step, 3u);
  EXPECT_GT(r.total_discards, 0u);
}

TEST(Train, RunDirectoryArtifacts) {
  const fs::path dir = scratch_dir("artifacts");
  TrainConfig t = quick_train(12);
  t.checkpoint_every = 5;
  TrainOptions opts;
  opts.run_dir = dir.string();
  std::size_t callbacks = 0;
  opts.on_step = [&](const TrainLogRow&) { ++callbacks; };
  const auto r = train(small_dataset(), small_model(), TargetSpec{}, t, opts);
  EXPECT_EQ(callbacks, 12u);
  ASSERT_EQ(r.checkpoint_paths.size(), 3u);
  EXPECT_EQ(fs::path(r.checkpoint_paths[0]).filename(), "ckpt_00000005.bmnck");
  EXPECT_EQ(fs::path(r.checkpoint_paths[2]).filename(), "ckpt_00000012.bmnck");

  std::ifstream log(dir / "train_log.csv");
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, kTrainLogHeader);
  std::size_t rows = 0;
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, 12u);

  const Checkpoint fin = load_checkpoint((dir / "final.bmnck").string(), small_model());
  EXPECT_EQ(fin.params, r.checkpoint.params);
  EXPECT_EQ(fin.step, 12u);
  EXPECT_EQ(load_checkpoint(r.checkpoint_paths[0]).step, 5u);
  fs::remove_all(dir);
}

TEST(Train, ResumeFromInitialParameters) {
  const Dataset ds = small_dataset();
  const auto first = train(ds, small_model(), TargetSpec{}, quick_train(10));
  TrainOptions opts;
  opts.initial = &first.checkpoint.params;
  const auto second = train(ds, small_model(), TargetSpec{}, quick_train(10), opts);
  EXPECT_NE(second.checkpoint.params, first.checkpoint.params);
  ModelConfig other = small_model();
  other.d = 16;
  EXPECT_THROW(train(ds, other, TargetSpec{}, quick_train(1), opts), ShapeError);
}

TEST(TrainLog, FormatsAllColumns) {
  const TrainLogRow row{7, 1, 0.01, 0.5, 1.5, 2.0, 0.25, 1.0, 3};
  EXPECT_EQ(format_log_row(row), "7,1,0.01,0.5,1.5,2,0.250000,1.000000,3");
}

// Property: repeated Adam steps on one frozen batch lower that batch's loss.
TEST(TrainProperty, FrozenBatchLossDecreases) {
  const Dataset ds = small_dataset(10, 6);
  ModelConfig m = small_model();
  m.dropout_keep = 1.0;
  m.zero_init_output = false;
  const TargetSpec target;
  int improved = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    m.seed = 100 + trial;
    ModelParams p = init_params(m);
    CandidateStream stream = sample_epoch(ds, EpochConfig{}, trial + 1);
    const auto fill = fill_batch(stream, p, ds, target, 20, 0, false);
    ASSERT_FALSE(fill.discarded());
    const auto [x1, x2] = batch_inputs(*fill.batch, ds);
    std::mt19937_64 rng(trial);
    OptimizerState s = OptimizerState::zeros_like(p);
    const double before = loss_and_grads(p, m, target, x1, x2, 10, rng).loss.total;
    for (int k = 0; k < 50; ++k) {
      const auto out = loss_and_grads(p, m, target, x1, x2, 10, rng);
      adam_step(p, out.grads, s, 0.01, 0.0);
    }
    const double after = loss_and_grads(p, m, target, x1, x2, 10, rng).loss.total;
    if (after < before) ++improved;
  }
  EXPECT_GE(improved, 18) << improved << "/" << trials;
}
