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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "stfed/local_models.h"
#include "support/param_check.h"

namespace stfed {
namespace {

Tensor Random(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = n(rng);
  return t;
}

ParameterList ParamsOf(TemporalStack& s) {
  ParameterList out;
  s.AppendParameters(out);
  return out;
}

TEST(Temporal, ZeroParametersGiveZeroState) {
  std::mt19937_64 rng(1);
  TemporalStack s("t", 2, 1, 8, 2, rng);
  ZeroParameters(ParamsOf(s));
  Tape t;
  Binder b(t);
  // z = r = sigmoid(0) = 1/2 and n = tanh(0) = 0, so h stays 0.
  const Tensor h = s.Forward(b, t.Input(Random({4, 2}, 2))).value();
  EXPECT_EQ(h, Tensor::Zeros({4, 8}));
}

TEST(Temporal, OutputShape) {
  std::mt19937_64 rng(1);
  TemporalStack s("t", 2, 12, 32, 2, rng);
  Tape t;
  Binder b(t);
  EXPECT_EQ(s.Forward(b, t.Input(Random({5, 24}, 3))).shape(),
            (Shape{5, 32}));
  EXPECT_EQ(s.Forward(b, t.Input(Random({3, 5, 24}, 3))).shape(),
            (Shape{3, 5, 32}));
  EXPECT_THROW(s.Forward(b, t.Input(Random({5, 23}, 3))), ShapeError);
}

TEST(Temporal, BatchedMatchesUnbatched) {
  std::mt19937_64 rng(4);
  TemporalStack s("t", 2, 5, 6, 2, rng);
  const Tensor x = Random({3, 4, 10}, 5);
  Tape t;
  Binder b(t);
  const Tensor batched = s.Forward(b, t.Input(x)).value();
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor single = s.Forward(b, t.Input(x.BatchSlice(i))).value();
    EXPECT_EQ(single, batched.BatchSlice(i));
  }
}

TEST(Temporal, EmbeddingGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  TemporalStack s("t", 2, 4, 6, 2, rng);
  const Tensor x = Random({3, 8}, 7);
  auto loss = [&](Binder& b) { return Sum(s.Forward(b, b.tape().Input(x))); };
  for (Parameter* p : {&s.embedding.weight, &s.embedding.bias}) {
    const auto r = testing::CheckParameterGradient(loss, *p);
    EXPECT_LE(r.max_relative_error, 1e-4) << p->name;
    EXPECT_EQ(r.checked, p->value.size()) << p->name;
  }
  const auto r = testing::CheckParameterGradient(loss, s.cells[1].recurrent.weight);
  EXPECT_LE(r.max_relative_error, 1e-4);
}

TEST(Adjacency, RowNormalizedWithSelfLoops) {
  const std::vector<Point> pts = {{0, 0}, {0.1, 0}, {0.2, 0.1}, {5, 5}};
  const Tensor a = BuildAdjacency(pts);
  for (std::size_t i = 0; i < 4; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < 4; ++j) row += a.at(i, j);
    EXPECT_NEAR(row, 1.0, 1e-12);
    EXPECT_GT(a.at(i, i), 0.0);
  }
  // The far node only keeps its self loop.
  EXPECT_DOUBLE_EQ(a.at(3, 3), 1.0);
  EXPECT_EQ(a.at(0, 3), 0.0);
}

TEST(Spatial, PassThroughConfiguration) {
  std::mt19937_64 rng(1);
  SpatialLayer layer("s", 4, Activation::kLinear, rng);
  layer.w_self.value = Tensor::Zeros({4, 4});
  layer.w_skip.value = Tensor::Identity(4);
  Tape t;
  Binder b(t);
  const Tensor h = Random({5, 4}, 2);
  EXPECT_EQ(layer.Forward(b, t.Constant(Tensor::Identity(5)), t.Input(h))
                .value(),
            h);
}

TEST(Spatial, PermutationEquivariance) {
  std::mt19937_64 rng(3);
  SpatialLayer layer("s", 6, Activation::kRelu, rng);
  const Tensor swap = Tensor::FromRows({{0, 1}, {1, 0}});
  const Tensor h = Random({2, 6}, 4);
  Tensor swapped({2, 6});
  for (std::size_t c = 0; c < 6; ++c) {
    swapped.at(0, c) = h.at(1, c);
    swapped.at(1, c) = h.at(0, c);
  }
  Tape t;
  Binder b(t);
  const Tensor out = layer.Forward(b, t.Constant(swap), t.Input(h)).value();
  const Tensor out_swapped =
      layer.Forward(b, t.Constant(swap), t.Input(swapped)).value();
  for (std::size_t c = 0; c < 6; ++c) {
    EXPECT_DOUBLE_EQ(out_swapped.at(0, c), out.at(1, c));
    EXPECT_DOUBLE_EQ(out_swapped.at(1, c), out.at(0, c));
  }
}

TEST(Spatial, ShapePreserved) {
  std::mt19937_64 rng(1);
  const std::vector<Point> pts = {{0, 0}, {1, 0}, {0, 1}, {1, 1}, {2, 2}};
  SpatialStack s("s", BuildAdjacency(pts), 32, 2, Activation::kRelu, rng);
  Tape t;
  Binder b(t);
  EXPECT_EQ(s.Layer(b, 0, t.Input(Random({5, 32}, 1))).shape(),
            (Shape{5, 32}));
}

TEST(MultiLevel, ListsTemporalStateAndEverySpatialLayer) {
  std::mt19937_64 rng(2);
  const std::vector<Point> pts = {{0, 0}, {1, 0}, {0, 1}};
  TemporalStack temporal("t", 2, 4, 8, 1, rng);
  SpatialStack spatial("s", BuildAdjacency(pts), 8, 2, Activation::kRelu, rng);
  Tape t;
  Binder b(t);
  const auto levels = MultiLevel(b, t.Input(Random({3, 8}, 1)), temporal, spatial);
  ASSERT_EQ(levels.size(), 3u);
  for (Var v : levels) {
    EXPECT_EQ(v.shape(), (Shape{3, 8}));
    // Fusion-free: nothing received from another party enters.
    EXPECT_FALSE(t.DependsOn(v.id(), LeafKind::kReceived));
  }
}

TEST(Head, ZeroWeightsPredictZero) {
  std::mt19937_64 rng(1);
  PredictionHead head("h", 16, 16, 3, 1, rng);
  ParameterList ps;
  head.AppendParameters(ps);
  ZeroParameters(ps);
  Tape t;
  Binder b(t);
  EXPECT_EQ(head.Forward(b, t.Input(Random({5, 16}, 2))).value(),
            Tensor::Zeros({5, 3}));
}

TEST(Head, LayoutIsLeadMajor) {
  std::mt19937_64 rng(1);
  PredictionHead head("h", 64, 64, 12, 2, rng);
  Tape t;
  Binder b(t);
  const Tensor y = head.Forward(b, t.Input(Random({5, 64}, 2))).value();
  EXPECT_EQ(y.shape(), (Shape{5, 24}));
  EXPECT_EQ(PredictionAt(y, 4, 11, 1, 2), y.at(4, 23));
  EXPECT_EQ(PredictionAt(y, 2, 3, 0, 2), y.at(2, 6));
}

TEST(Head, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  PredictionHead head("h", 6, 5, 2, 2, rng);
  const Tensor h = Random({3, 6}, 10);
  auto loss = [&](Binder& b) { return Sum(Tanh(head.Forward(b, b.tape().Input(h)))); };
  ParameterList ps;
  head.AppendParameters(ps);
  for (Parameter* p : ps) {
    const auto r = testing::CheckParameterGradient(loss, *p);
    EXPECT_LE(r.max_relative_error, 1e-4) << p->name;
  }
}

TEST(Binder, FrozenBinderStopsGradients) {
  std::mt19937_64 rng(1);
  LinearLayer l("l", 2, 2, true, rng);
  Tape t;
  Binder frozen(t, true);
  Var x = t.Input(Random({1, 2}, 1), true);
  t.Backward(Sum(l.Forward(frozen, x)));
  t.AccumulateParameterGradients();
  EXPECT_TRUE(l.weight.grad.empty() || l.weight.grad.MaxAbs() == 0.0);
  EXPECT_NE(t.grad(x.id()), nullptr);
}

}  // namespace
}  // namespace stfed
