#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "bmn/dataset.hpp"
#include "bmn/mining.hpp"
#include "oracles.hpp"

using namespace bmn;

namespace {

constexpr std::size_t kDim = 16;

// Network whose latent output is z = 50·(x1[0] + 1), independent of x2.
ModelConfig controlled_config() {
  ModelConfig c;
  c.input_dim = kDim;
  c.d = 16;
  c.encoder_hidden = {};
  return c;
}

ModelParams controlled_params() {
  const ModelConfig c = controlled_config();
  ModelParams p = init_params(c);
  for (std::size_t i = 0; i < p.layer_count(); ++i) {
    for (double& w : p.layer(i).weight.data()) w = 0.0;
    for (double& b : p.layer(i).bias.data()) b = 0.0;
  }
  p.encoder[0].weight = Matrix::identity(kDim);
  p.metric[0].weight(0, 0) = 1.0;
  p.metric[0].bias(0, 0) = 1.0;
  for (std::size_t l = 1; l + 1 < p.metric.size(); ++l) p.metric[l].weight(0, 0) = 1.0;
  p.metric.back().weight(0, 0) = 50.0;
  return p;
}

/// Item whose use as the first element of a pair yields latent value z.
DatasetItem item_for(double z, std::uint32_t id) {
  DatasetItem it{id, std::vector<float>(kDim, 0.0f)};
  it.values[0] = static_cast<float>(z / 50.0 - 1.0);
  return it;
}

struct Builder {
  Dataset ds;
  std::vector<SamplePair> pairs;

  Builder() { ds.geometry = {Modality::Vector, 0, 0, kDim}; }

  // Adds a pair whose first item produces latent value z.
  void add(double z, PairLabel label) {
    const std::uint32_t id1 = static_cast<std::uint32_t>(ds.items.size());
    const std::uint32_t id2 = label == PairLabel::Matching ? id1 : id1 + 1;
    ds.items.push_back(item_for(z, id1));
    ds.items.push_back(item_for(0.0, id2));
    pairs.push_back({ds.items.size() - 2, ds.items.size() - 1, id1, id2, false, false, label});
  }
};

constexpr auto M = PairLabel::Matching;
constexpr auto N = PairLabel::NonMatching;
const TargetSpec kTarget{};

}  // namespace

TEST(ControlledNet, ProducesRequestedLatent) {
  Builder bld;
  for (double z : {0.0, 5.0, 39.0, 77.5}) bld.add(z, M);
  const Matrix z = score_pairs(controlled_params(), bld.ds, bld.pairs);
  EXPECT_NEAR(z[0], 0.0, 1e-5);
  EXPECT_NEAR(z[1], 5.0, 1e-5);
  EXPECT_NEAR(z[2], 39.0, 1e-5);
  EXPECT_NEAR(z[3], 77.5, 1e-5);
}

TEST(IsDifficult, Examples) {
  EXPECT_TRUE(is_difficult(std::vector<double>{2.5}, M, kTarget));
  EXPECT_FALSE(is_difficult(std::vector<double>{0.0}, M, kTarget));
  EXPECT_FALSE(is_difficult(std::vector<double>{1.999}, M, kTarget));
  EXPECT_TRUE(is_difficult(std::vector<double>{0.0}, N, kTarget));
  EXPECT_FALSE(is_difficult(std::vector<double>{41.0}, N, kTarget));
  TargetSpec t3;
  t3.p = 3;
  EXPECT_TRUE(is_difficult(std::vector<double>{0.5, 0.5, 2.0}, M, t3));
  EXPECT_FALSE(is_difficult(std::vector<double>{0.5, -1.5, 1.9}, M, t3));
  EXPECT_THROW(is_difficult(std::vector<double>{1, 2}, M, kTarget), ShapeError);
}

TEST(IsDifficult, UsesClassSigma) {
  TargetSpec t;
  t.sigma_m = 3.0;
  EXPECT_FALSE(is_difficult(std::vector<double>{5.9}, M, t));
  EXPECT_TRUE(is_difficult(std::vector<double>{6.0}, M, t));
}

TEST(FillBatch, AllDifficultTakesFirstPairsInOrder) {
  Builder bld;
  for (int i = 0; i < 10; ++i) {
    bld.add(5.0, M);
    bld.add(5.0, N);
  }
  CandidateStream stream(bld.pairs);
  const auto r = fill_batch(stream, controlled_params(), bld.ds, kTarget, 8);
  ASSERT_FALSE(r.discarded());
  EXPECT_EQ(r.batch->matching.size(), 4u);
  EXPECT_EQ(r.batch->non_matching.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(r.batch->matching[k], bld.pairs[2 * k]);
    EXPECT_EQ(r.batch->non_matching[k], bld.pairs[2 * k + 1]);
  }
  EXPECT_EQ(stream.consumed(), 8u);
}

TEST(FillBatch, OneDifficultNonMatchingShortDiscards) {
  Builder bld;
  const std::size_t b = 8;
  for (std::size_t i = 0; i < b / 2; ++i) bld.add(5.0, M);
  for (std::size_t i = 0; i + 1 < b / 2; ++i) bld.add(5.0, N);
  for (int i = 0; i < 20; ++i) bld.add(40.0, N);  // easy non-matching
  for (int i = 0; i < 20; ++i) bld.add(0.5, M);   // easy matching
  CandidateStream stream(bld.pairs);
  const auto r = fill_batch(stream, controlled_params(), bld.ds, kTarget, b);
  EXPECT_TRUE(r.discarded());
  EXPECT_EQ(r.stats.difficult_m, b / 2);
  EXPECT_EQ(r.stats.difficult_n, b / 2 - 1);
  EXPECT_TRUE(stream.exhausted());
}

TEST(FillBatch, WindowBoundsTheSearch) {
  Builder bld;
  for (int i = 0; i < 10; ++i) bld.add(0.0, M);
  for (int i = 0; i < 4; ++i) {
    bld.add(5.0, M);
    bld.add(5.0, N);
  }
  CandidateStream stream(bld.pairs);
  EXPECT_TRUE(fill_batch(stream, controlled_params(), bld.ds, kTarget, 4, 10).discarded());
  EXPECT_EQ(stream.consumed(), 10u);
  EXPECT_FALSE(fill_batch(stream, controlled_params(), bld.ds, kTarget, 4, 10).discarded());
}

TEST(FillBatch, UnfilteredModeTakesStreamOrder) {
  Builder bld;
  for (int i = 0; i < 3; ++i) {
    bld.add(0.0, M);
    bld.add(40.0, N);
  }
  CandidateStream stream(bld.pairs);
  const auto r = fill_batch(stream, controlled_params(), bld.ds, kTarget, 4, 0, false);
  ASSERT_FALSE(r.discarded());
  EXPECT_EQ(r.batch->matching[0], bld.pairs[0]);
  EXPECT_EQ(r.batch->non_matching[1], bld.pairs[3]);
  EXPECT_EQ(r.stats.difficult_m, 0u);
  EXPECT_EQ(r.stats.difficult_n, 0u);
}

TEST(FillBatch, BadBatchSize) {
  CandidateStream s;
  Builder bld;
  EXPECT_THROW(fill_batch(s, controlled_params(), bld.ds, kTarget, 5), ConfigError);
  EXPECT_THROW(fill_batch(s, controlled_params(), bld.ds, kTarget, 2), ConfigError);
  EXPECT_THROW(fill_batch_hardest(s, controlled_params(), bld.ds, kTarget, 4, 0), ConfigError);
}

TEST(FillBatchHardest, KeepsLargestDeviations) {
  Builder bld;
  const double zm[] = {0.1, 3.0, 0.5, 1.5, 0.2};
  const double zn[] = {39.5, 30.0, 41.0, 37.0, 40.0};
  for (int i = 0; i < 5; ++i) {
    bld.add(zm[i], M);
    bld.add(zn[i], N);
  }
  CandidateStream stream(bld.pairs);
  const auto r = fill_batch_hardest(stream, controlled_params(), bld.ds, kTarget, 4, 100);
  ASSERT_FALSE(r.discarded());
  EXPECT_TRUE(stream.exhausted());
  EXPECT_EQ(r.batch->matching[0], bld.pairs[2]);      // 3.0
  EXPECT_EQ(r.batch->matching[1], bld.pairs[6]);      // 1.5
  EXPECT_EQ(r.batch->non_matching[0], bld.pairs[3]);  // 30
  EXPECT_EQ(r.batch->non_matching[1], bld.pairs[7]);  // 37
  EXPECT_EQ(r.stats.difficult_m, 1u);
  EXPECT_EQ(r.stats.difficult_n, 2u);
}

TEST(FillBatchHardest, DiscardsWhenAClassIsShort) {
  Builder bld;
  for (int i = 0; i < 5; ++i) bld.add(3.0, M);
  bld.add(10.0, N);
  CandidateStream stream(bld.pairs);
  EXPECT_TRUE(fill_batch_hardest(stream, controlled_params(), bld.ds, kTarget, 4, 100).discarded());
}

TEST(SampleEpoch, EnumeratesUnorderedPairs) {
  Dataset ds;
  ds.geometry = {Modality::Vector, 0, 0, 2};
  for (std::uint32_t id = 0; id < 2; ++id)
    for (int k = 0; k < 2; ++k) ds.items.push_back({id, {0.1f * k, -0.2f}});
  EpochConfig cfg;
  cfg.min_images = 2;
  cfg.flip_augment = false;
  cfg.negatives_per_positive = 0.0;
  const auto s = sample_epoch(ds, cfg, 1);
  std::size_t m = 0, n = 0;
  for (const auto& p : s.pairs()) {
    (p.label == M ? m : n)++;
    EXPECT_EQ(p.label == M, ds.items[p.item1].identity == ds.items[p.item2].identity);
    EXPECT_NE(p.item1, p.item2);
  }
  EXPECT_EQ(m, 2u);
  EXPECT_EQ(n, 4u);

  cfg.flip_augment = true;
  EXPECT_EQ(sample_epoch(ds, cfg, 1).size(), 24u);
}

TEST(SampleEpoch, SameSeedSameOrder) {
  SyntheticSpec spec;
  spec.n_identities = 6;
  spec.images_per_identity = 5;
  const Dataset ds = generate_synthetic(spec);
  const EpochConfig cfg;
  EXPECT_EQ(sample_epoch(ds, cfg, 3).pairs(), sample_epoch(ds, cfg, 3).pairs());
  EXPECT_NE(sample_epoch(ds, cfg, 3).pairs(), sample_epoch(ds, cfg, 4).pairs());
}

TEST(SampleEpoch, BalancesNegativesAndRespectsFilters) {
  SyntheticSpec spec;
  spec.n_identities = 8;
  spec.images_per_identity = 5;
  Dataset ds = generate_synthetic(spec);
  ds.items.erase(ds.items.begin() + 1, ds.items.begin() + 3);  // identity 0 keeps 3 images
  EpochConfig cfg;
  cfg.flip_augment = false;
  const std::vector<std::uint32_t> allowed{0, 1, 2, 3, 4, 5};
  const auto s = sample_epoch(ds, cfg, 9, allowed);
  std::size_t m = 0, n = 0;
  for (const auto& p : s.pairs()) {
    (p.label == M ? m : n)++;
    EXPECT_NE(p.id1, 0u);
    EXPECT_LE(p.id1, 5u);
    EXPECT_LE(p.id2, 5u);
  }
  EXPECT_EQ(m, 5u * 10u);
  EXPECT_EQ(n, m);
}

TEST(SampleEpoch, SingleIdentityHasNoNegatives) {
  SyntheticSpec spec;
  spec.n_identities = 1;
  spec.images_per_identity = 6;
  const auto s = sample_epoch(generate_synthetic(spec), EpochConfig{}, 1);
  for (const auto& p : s.pairs()) EXPECT_EQ(p.label, M);
  EXPECT_GT(s.size(), 0u);
}

// At initialization the output projection is zero, so z sits exactly on mu_m:
// every non-matching pair is difficult and no matching pair is.
TEST(InitialState, DifficultFractionsAtInitialization) {
  const Dataset ds = generate_synthetic(SyntheticSpec{});
  ModelConfig c;
  const ModelParams p = init_params(c);
  CandidateStream s = sample_epoch(ds, EpochConfig{}, 1);
  const auto r = fill_batch(s, p, ds, kTarget, 20, 2048);
  EXPECT_TRUE(r.discarded());
  EXPECT_EQ(r.stats.difficult_fraction_n(), 1.0);
  EXPECT_EQ(r.stats.difficult_fraction_m(), 0.0);
}

// Property: every member of every emitted batch is difficult under the selection snapshot.
TEST(MiningProperty, EmittedMembersRePassDifficulty) {
  const Dataset ds = generate_synthetic(SyntheticSpec{});
  ModelConfig c;
  c.zero_init_output = false;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    c.seed = seed;
    ModelParams p = init_params(c);
    for (double& w : p.metric.back().weight.data()) w *= 20.0;
    CandidateStream s = sample_epoch(ds, EpochConfig{}, seed);
    // Centres straddle the observed latent median so both classes have difficult pairs.
    const Matrix probe = score_pairs(p, ds, s.peek(2000));
    std::vector<double> zs(probe.data().begin(), probe.data().end());
    std::nth_element(zs.begin(), zs.begin() + zs.size() / 2, zs.end());
    const auto [mean, var] = oracle::column_moments(probe);
    const double spread = std::max(std::sqrt(var[0]), 1e-3);
    TargetSpec t;
    t.mu_m = zs[zs.size() / 2] - spread;
    t.mu_n = zs[zs.size() / 2] + spread;
    t.sigma_m = t.sigma_n = spread / 4.0;
    std::size_t batches = 0;
    for (int k = 0; k < 30 && !s.exhausted(); ++k) {
      const auto r = fill_batch(s, p, ds, t, 20);
      if (r.discarded()) continue;
      ++batches;
      ASSERT_EQ(r.batch->matching.size(), 10u);
      ASSERT_EQ(r.batch->non_matching.size(), 10u);
      for (const auto* list : {&r.batch->matching, &r.batch->non_matching}) {
        const Matrix z = score_pairs(p, ds, *list);
        for (std::size_t i = 0; i < list->size(); ++i) {
          EXPECT_TRUE(is_difficult(z.row_span(i), (*list)[i].label, t));
        }
      }
    }
    EXPECT_GT(batches, 0u) << "seed " << seed;
  }
}

TEST(CandidateStream, RewindNeverMovesForward) {
  Builder bld;
  for (int i = 0; i < 5; ++i) bld.add(1.0, M);
  CandidateStream s(bld.pairs);
  s.advance(4);
  s.rewind_to(1);
  EXPECT_EQ(s.consumed(), 1u);
  EXPECT_EQ(s.peek(1)[0], bld.pairs[1]);
  s.rewind_to(3);
  EXPECT_EQ(s.consumed(), 1u);
}
