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

#include <gtest/gtest.h>

#include "stfed/gradient_check.h"
#include "stfed/parameter.h"
#include "stfed/tape.h"
#include "support/grad_suite.h"

namespace stfed {
namespace {

TEST(TensorOps, MatmulByIdentity) {
  Tape t;
  Var a = t.Constant(Tensor::FromRows({{1, 2}, {3, 4}}));
  Var i = t.Constant(Tensor::FromRows({{1, 0}, {0, 1}}));
  EXPECT_EQ(MatMul(a, i).value(), Tensor::FromRows({{1, 2}, {3, 4}}));
}

TEST(TensorOps, SoftmaxOfEqualEntries) {
  Tape t;
  EXPECT_EQ(SoftmaxRows(t.Constant(Tensor::FromRows({{0, 0}}))).value(),
            Tensor::FromRows({{0.5, 0.5}}));
}

TEST(TensorOps, ReluClampsNegatives) {
  Tape t;
  EXPECT_EQ(Relu(t.Constant(Tensor::FromRows({{-1, 2}}))).value(),
            Tensor::FromRows({{0, 2}}));
}

TEST(TensorOps, SharedMatmulOperandBroadcastsOverBatch) {
  Tape t;
  Tensor x({2, 1, 2}, std::vector<double>{1, 2, 3, 4});
  Var y = MatMul(t.Constant(x), t.Constant(Tensor::FromRows({{1}, {10}})));
  EXPECT_EQ(y.shape(), (Shape{2, 1, 1}));
  EXPECT_DOUBLE_EQ(y.value()[0], 21.0);
  EXPECT_DOUBLE_EQ(y.value()[1], 43.0);
}

TEST(TensorOps, ShapeMismatchNamesOpAndShapes) {
  Tape t;
  try {
    Add(t.Constant(Tensor::Zeros({2, 3})), t.Constant(Tensor::Zeros({3, 2})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos) << msg;
  }
}

TEST(TensorOps, MixingTapesThrows) {
  Tape a;
  Tape b;
  EXPECT_THROW(Add(a.Constant(Tensor::Zeros({1, 1})),
                   b.Constant(Tensor::Zeros({1, 1}))),
               Error);
}

TEST(Backward, SumGivesOnes) {
  Tape t;
  Var x = t.Input(Tensor::FromRows({{1, 2}, {3, 4}}), true);
  t.Backward(Sum(x));
  EXPECT_EQ(t.GradTensor(x.id()), Tensor::Ones({2, 2}));
}

TEST(Backward, ReluSubgradient) {
  Tape t;
  Var x = t.Input(Tensor::FromRows({{-1, 2}}), true);
  t.Backward(Sum(Relu(x)));
  EXPECT_EQ(t.GradTensor(x.id()), Tensor::FromRows({{0, 1}}));
}

TEST(Backward, SumOfSoftmaxHasZeroGradient) {
  Tape t;
  Var x = t.Input(Tensor::FromRows({{0.3, -1.2, 2.0}, {0.1, 0.5, -0.4}}), true);
  t.Backward(Sum(SoftmaxRows(x)));
  EXPECT_LT(t.GradTensor(x.id()).MaxAbs(), 1e-15);
  // The finite-difference oracle agrees.
  const auto r = GradientCheck(
      [](Tape&, std::span<const Var> in) { return Sum(SoftmaxRows(in[0])); },
      {Tensor::FromRows({{0.3, -1.2, 2.0}})});
  EXPECT_TRUE(r.passed) << r.failure;
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape t;
  Var x = t.Input(Tensor::Zeros({2, 2}), true);
  EXPECT_THROW(t.Backward(x), Error);
}

TEST(Backward, FanOutAccumulates) {
  Tape t;
  Var x = t.Input(Tensor::FromRows({{3}}), true);
  t.Backward(Sum(Mul(x, x)));
  EXPECT_DOUBLE_EQ(t.GradTensor(x.id())[0], 6.0);
}

TEST(GradientCheck, SingleMatmulIsTight) {
  const auto cases = testing::AllOpCases(3);
  for (const auto& c : cases) {
    if (c.name != "matmul") continue;
    const auto r = GradientCheck(c.graph, c.point);
    EXPECT_TRUE(r.passed);
    EXPECT_LT(r.max_relative_error, 1e-6);
  }
}

TEST(GradientCheck, SigmoidChain) {
  for (const auto& c : testing::AllOpCases(4)) {
    if (c.name != "sigmoid-chain") continue;
    const auto r = GradientCheck(c.graph, c.point);
    EXPECT_TRUE(r.passed);
    EXPECT_LT(r.max_relative_error, 1e-5);
  }
}

TEST(GradientCheck, EveryOpPasses) {
  for (std::uint64_t seed : {1u, 2u}) {
    for (const auto& c : testing::AllOpCases(seed)) {
      const auto r = GradientCheck(c.graph, c.point);
      EXPECT_TRUE(r.passed) << c.name << ": " << r.failure;
      EXPECT_LE(r.max_relative_error, 1e-4) << c.name;
      EXPECT_TRUE(r.excluded.empty()) << c.name;
    }
  }
}

TEST(GradientCheck, ReluKinkIsExcludedAndReported) {
  const auto r = GradientCheck(
      [](Tape&, std::span<const Var> in) { return Sum(Relu(in[0])); },
      {Tensor::FromRows({{0.0, 1.5, -0.7}})});
  EXPECT_TRUE(r.passed) << r.failure;
  ASSERT_EQ(r.excluded.size(), 1u);
  EXPECT_EQ(r.excluded[0].index, 0u);
  EXPECT_EQ(r.checked, 2u);
}

TEST(GradientCheck, DetectsAWrongGradient) {
  // y = 2x recorded with a backward that forgets the factor 2.
  const auto r = GradientCheck(
      [](Tape& t, std::span<const Var> in) {
        const NodeId ix = in[0].id();
        Tensor out = in[0].value();
        for (double& v : out.mutable_values()) v *= 2.0;
        Var y = t.Record(OpKind::kAffine, std::move(out), {ix},
                         [ix](Tape& tape, NodeId self) {
                           const auto& g = *tape.grad(self);
                           auto dx = tape.MutableGrad(ix);
                           for (std::size_t i = 0; i < dx.size(); ++i) {
                             dx[i] += g[i];
                           }
                         });
        return Sum(y);
      },
      {Tensor::FromRows({{1.0, 2.0}})});
  EXPECT_FALSE(r.passed);
  EXPECT_NEAR(r.max_relative_error, 0.5, 1e-6);
}

TEST(GradientCheck, RejectsStepOutsideRange) {
  GradientCheckOptions o;
  o.step = 1.0;
  EXPECT_THROW(
      GradientCheck([](Tape&, std::span<const Var> in) { return Sum(in[0]); },
                    {Tensor::Ones({1, 1})}, o),
      Error);
}

TEST(Provenance, TracesValuePreservingOpsOnly) {
  Tape t;
  Parameter w("w", Tensor::FromRows({{1, 2}, {3, 4}}));
  Var p = t.Param(w);
  Var x = t.Input(Tensor::FromRows({{1, 1}, {2, 2}}));
  Var copied = Transpose(SliceRows(ConcatRows(std::vector<Var>{p, x}), 0, 3));
  const auto direct = t.DirectProvenance(copied.id());
  EXPECT_TRUE(direct.contains(LeafKind::kParameter));
  EXPECT_TRUE(direct.contains(LeafKind::kRawInput));
  Var mixed = Tanh(MatMul(x, p));
  EXPECT_TRUE(t.DirectProvenance(mixed.id()).empty());
  EXPECT_TRUE(t.DependsOn(mixed.id(), LeafKind::kParameter));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p("p", Tensor::FromRows({{1.0, -1.0}}));
  p.grad = Tensor::FromRows({{0.5, -2.0}});
  AdamOptions o;
  o.learning_rate = 0.1;
  o.weight_decay = 0.0;
  Adam adam(o);
  adam.Step({&p});
  // Bias-corrected first step is lr * sign(g).
  EXPECT_NEAR(p.value[0], 0.9, 1e-7);
  EXPECT_NEAR(p.value[1], -0.9, 1e-7);
  EXPECT_EQ(p.grad, Tensor::Zeros({1, 2}));
}

TEST(Tape, ParameterGradientsAccumulate) {
  Tape t;
  Parameter p("p", Tensor::FromRows({{2.0}}));
  Var a = t.Param(p);
  t.Backward(Sum(Mul(a, a)));
  t.AccumulateParameterGradients();
  EXPECT_DOUBLE_EQ(p.grad[0], 4.0);
}

}  // namespace
}  // namespace stfed
