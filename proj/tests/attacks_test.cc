// Copyright 2026 The stfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "stfed/attacks.h"

namespace stfed {
namespace {

Tensor Random(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = n(rng);
  return t;
}

Tensor Scaled(Tensor t, double s) {
  for (double& v : t.mutable_values()) v *= s;
  return t;
}

double Norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

TEST(InfoLeak, PerfectReconstructionScoresOne) {
  const Tensor x = Random({3, 4, 5}, 1);
  EXPECT_EQ(InfoLeak(x, x), 1.0);
}

TEST(InfoLeak, UnitDistanceScoresOneHalf) {
  Tensor x = Tensor::Zeros({2, 2, 2});
  Tensor y = x;
  y.mutable_values()[0] = 1.0;  // sample 0
  y.mutable_values()[7] = -1.0;  // sample 1
  EXPECT_EQ(SampleDistances(x, y), (std::vector<double>{1.0, 1.0}));
  EXPECT_DOUBLE_EQ(InfoLeak(x, y), 0.5);
  EXPECT_THROW(InfoLeak(x, Tensor::Zeros({2, 2, 3})), Error);
}

TEST(TotalVariation, HandValues) {
  Tape t;
  // One series, one feature, three steps.
  Var x = t.Constant(Tensor::FromRows({{0, 1, 3}}));
  EXPECT_DOUBLE_EQ(TotalVariation(x, 1, 2.0).value()[0], 5.0);
  EXPECT_DOUBLE_EQ(TotalVariation(x, 1, 1.0).value()[0], 3.0);
  // Two features interleaved per step: differences are per feature.
  Var y = t.Constant(Tensor::FromRows({{0, 5, 1, 5, 3, 5}}));
  EXPECT_DOUBLE_EQ(TotalVariation(y, 2, 2.0).value()[0], 5.0);
  EXPECT_EQ(TotalVariation(t.Constant(Tensor({2, 3, 6}, 4.0)), 2, 2.0)
                .value()[0],
            0.0);
}

TEST(Whitebox, IdentityMapRecoversTheInput) {
  const Tensor truth = Random({2, 3, 4}, 2);
  WhiteboxOptions o;
  o.lambda = 0.0;
  o.steps = 600;
  const RepresentationMap identity = [](Binder&, Var x) { return x; };
  const AttackReport r = WhiteboxAttack(truth, truth, identity, 2, o);
  EXPECT_GT(r.infoleak, 0.99);
  EXPECT_EQ(r.reconstruction.shape(), truth.shape());
  EXPECT_EQ(r.method, "whitebox");
}

TEST(Whitebox, SmoothingLowersTotalVariation) {
  const Tensor truth = Random({1, 3, 8}, 3);
  const RepresentationMap identity = [](Binder&, Var x) { return x; };
  WhiteboxOptions o;
  o.steps = 400;
  o.lambda = 0.0;
  const Tensor raw = WhiteboxAttack(truth, truth, identity, 1, o).reconstruction;
  o.lambda = 1.0;
  const Tensor smooth =
      WhiteboxAttack(truth, truth, identity, 1, o).reconstruction;
  Tape t;
  const double tv_raw = TotalVariation(t.Constant(raw), 1, 2.0).value()[0];
  const double tv_smooth =
      TotalVariation(t.Constant(smooth), 1, 2.0).value()[0];
  EXPECT_LT(tv_smooth, 0.8 * tv_raw);
}

TEST(Whitebox, ClippedMapRespectsTheBound) {
  SyntheticOptions so;
  so.num_active = 3;
  so.num_passive = 4;
  so.num_steps = 60;
  const SyntheticData raw = GenerateSynthetic(1, so);
  const PartyShape shape{4, 2, 5, raw.passive[0].coordinates};
  ModelConfig config;
  config.hidden = 8;
  config.knn = 2;
  config.adaptive_rank = 3;
  std::mt19937_64 rng(1);
  PassiveModel model("p", shape, raw.active.coordinates, config, rng);
  const RepresentationMap f = ClippedNodeMap(model, 0.5, 2);
  Tape t;
  Binder b(t, true);
  const Tensor out = f(b, t.Input(Scaled(Random({2, 4, 10}, 4), 50.0))).value();
  ASSERT_EQ(out.shape(), (Shape{2, 3, 16}));
  for (std::size_t i = 0; i < 2; ++i) {
    const Tensor item = out.BatchSlice(i);
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t level = 0; level < 2; ++level) {
        double s = 0.0;
        for (std::size_t c = 0; c < 8; ++c) {
          s += std::pow(item.at(r, level * 8 + c), 2);
        }
        EXPECT_LE(std::sqrt(s), 0.5 + 1e-12);
      }
    }
  }
}

TEST(Baselines, MeanAttackDistanceIsTheSampleNorm) {
  const Tensor x = Random({3, 2, 4}, 5);
  const AttackReport r = MeanAttack(x);
  ASSERT_EQ(r.distances.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    const Tensor s = x.BatchSlice(k);
    EXPECT_NEAR(r.distances[k], Norm(s.values()), 1e-12);
  }
  EXPECT_EQ(r.reconstruction, Tensor::Zeros({3, 2, 4}));
}

TEST(Baselines, RandomGuessIsSeededAndStandardized) {
  const Tensor x = Tensor::Zeros({4, 50, 50});
  const AttackReport a = RandomGuessAttack(x, GuessDistribution::kNormal, 3);
  const AttackReport b = RandomGuessAttack(x, GuessDistribution::kNormal, 3);
  const AttackReport c = RandomGuessAttack(x, GuessDistribution::kNormal, 4);
  EXPECT_EQ(a.reconstruction, b.reconstruction);
  EXPECT_NE(a.reconstruction, c.reconstruction);

  const AttackReport u = RandomGuessAttack(x, GuessDistribution::kUniform, 3);
  const double bound = std::sqrt(3.0);
  double sq = 0.0;
  for (double v : u.reconstruction.values()) {
    EXPECT_LE(std::abs(v), bound);
    sq += v * v;
  }
  EXPECT_NEAR(sq / static_cast<double>(x.size()), 1.0, 0.05);
}

TEST(Representatives, DistinctSortedAndSeeded) {
  const Tensor samples = Random({40, 3, 4}, 6);
  const auto idx = SelectRepresentatives(samples, 8, 1);
  ASSERT_EQ(idx.size(), 8u);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 8u);
  for (std::size_t i : idx) EXPECT_LT(i, 40u);
  EXPECT_EQ(SelectRepresentatives(samples, 8, 1), idx);
  // Asking for more clusters than samples returns every sample.
  const auto all = SelectRepresentatives(samples, 41, 1);
  ASSERT_EQ(all.size(), 40u);
  EXPECT_EQ(all.back(), 39u);
}

TEST(Representatives, RecoversWellSeparatedClusters) {
  // Three tight clusters far apart: one representative from each.
  Tensor samples({9, 1, 2});
  for (std::size_t k = 0; k < 9; ++k) {
    samples.mutable_values()[2 * k] = 100.0 * static_cast<double>(k / 3) +
                                      0.01 * static_cast<double>(k % 3);
  }
  const auto idx = SelectRepresentatives(samples, 3, 2);
  std::set<std::size_t> groups;
  for (std::size_t i : idx) groups.insert(i / 3);
  EXPECT_EQ(groups.size(), 3u);
}

TEST(Bound, IdentityModelDeviationMatchesNoise) {
  const Tensor w = Tensor::Identity(3);
  const std::vector<double> x = {0.5, -1.0, 2.0};
  const std::vector<double> noise = {0.1, 0.0, 0.0};
  const BoundTrial t = EvaluateBound(w, x, noise);
  EXPECT_NEAR(t.lipschitz, 1.0, 1e-12);
  EXPECT_NEAR(t.bound, 0.1, 1e-12);
  EXPECT_NEAR(t.deviation, 0.1, 1e-12);
  EXPECT_TRUE(t.consistent);
  EXPECT_TRUE(t.satisfied);
}

TEST(Bound, ScaledModelHalvesTheBound) {
  const Tensor w = Scaled(Tensor::Identity(2), 2.0);
  const std::vector<double> x = {1.0, 1.0};
  const std::vector<double> noise = {0.1, 0.0};
  const BoundTrial t = EvaluateBound(w, x, noise);
  EXPECT_NEAR(t.lipschitz, 2.0, 1e-12);
  EXPECT_NEAR(t.bound, 0.05, 1e-12);
  EXPECT_GE(t.deviation, t.bound - 1e-12);
  EXPECT_TRUE(t.satisfied);
}

TEST(Bound, RandomTrialsAllSatisfied) {
  DpConfig dp;
  dp.epsilon = 8.0;
  const BoundCheckResult r = BoundCheck(300, dp, 7);
  EXPECT_EQ(r.trials, 300u);
  EXPECT_EQ(r.passed + r.skipped, r.trials);
  EXPECT_EQ(r.pass_rate, 1.0);
  EXPECT_GE(r.min_ratio, 1.0 - 1e-9);
}

TEST(QueryFree, SurrogateAttackRunsAndIsReproducible) {
  SyntheticOptions so;
  so.num_active = 3;
  so.num_passive = 4;
  so.num_steps = 120;
  so.horizon = 2;
  const SyntheticData raw = GenerateSynthetic(2, so);
  const PreprocessedPanel active = Preprocess(raw.active);
  const PreprocessedPanel passive = Preprocess(raw.passive[0]);
  const AlignedWindows train(active.train, {&passive.train}, 4, so.horizon);
  ModelConfig model;
  model.hidden = 8;
  model.knn = 2;
  model.adaptive_rank = 3;
  Federation fed(MakeSpec(train, model, DpConfig{}, false, 3));

  const ShadowData shadow = ShadowFromWindows(train, 0);
  EXPECT_EQ(shadow.size(), train.size());
  const std::vector<std::size_t> items = {0, 7};
  const Tensor truth = train.PassiveInputs(0, items);
  const Tensor targets =
      fed.passive(0).Publish(truth, false)[0];  // level 0, eps = inf

  QueryFreeOptions o;
  o.epochs = 2;
  o.batch_size = 16;
  o.whitebox.steps = 50;
  auto run = [&]() {
    return QueryFreeAttack(targets, truth, shadow, fed.active().model(), 0,
                           fed.spec().passive[0], fed.spec().active.coordinates,
                           model, 1.0, o);
  };
  const AttackReport a = run();
  const AttackReport b = run();
  EXPECT_EQ(a.reconstruction, b.reconstruction);
  EXPECT_TRUE(std::isfinite(a.infoleak));
  EXPECT_GT(a.infoleak, 0.0);
  EXPECT_LE(a.infoleak, 1.0);
}

}  // namespace
}  // namespace stfed
