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

// Reverse-mode differentiation over a linear record of tensor operations.
//
// A Tape is owned by exactly one party. Operations combine Vars from the same
// tape only; mixing tapes is rejected, which is what keeps one party's graph
// from silently reading another party's tensors. Values cross party
// boundaries only as detached Tensors re-entered as kReceived leaves.

#ifndef STFED_TAPE_H_
#define STFED_TAPE_H_

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stfed/tensor.h"

namespace stfed {

struct Parameter;

enum class OpKind {
  kLeaf,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kAddBias,
  kAffine,
  kConcatRows,
  kConcatCols,
  kSliceRows,
  kSliceCols,
  kTranspose,
  kBroadcastBatch,
  kRelu,
  kSigmoid,
  kTanh,
  kSoftmaxRows,
  kL2NormRows,
  kRowScale,
  kClipFactor,
  kAbs,
  kPow,
  kSum,
  kMean,
};

std::string_view OpKindName(OpKind kind);

// Ops that only move or copy values; used by provenance tracing.
bool IsValuePreserving(OpKind kind);

enum class LeafKind { kParameter, kRawInput, kConstant, kReceived };

std::string_view LeafKindName(LeafKind kind);

using NodeId = std::size_t;

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  NodeId id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

class Tape {
 public:
  // Pushes the node's output gradient into its inputs' accumulators.
  using BackwardFn = std::function<void(Tape&, NodeId)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var Leaf(Tensor value, LeafKind kind, bool requires_grad,
           std::string label = {});
  Var Param(Parameter& parameter);
  Var Constant(Tensor value) {
    return Leaf(std::move(value), LeafKind::kConstant, false);
  }
  Var Input(Tensor value, bool requires_grad = false) {
    return Leaf(std::move(value), LeafKind::kRawInput, requires_grad);
  }

  // Used by op implementations.
  Var Record(OpKind kind, Tensor value, std::vector<NodeId> inputs,
             BackwardFn backward);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  OpKind kind(NodeId id) const { return nodes_[id].kind; }
  LeafKind leaf_kind(NodeId id) const { return nodes_[id].leaf_kind; }
  const std::string& label(NodeId id) const { return nodes_[id].label; }
  const std::vector<NodeId>& inputs(NodeId id) const {
    return nodes_[id].inputs;
  }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }

  // Reverse sweep seeded with d(loss)/d(loss) = 1. Rejects non-scalar losses.
  // Returns the gradient of every leaf that requires one.
  std::map<NodeId, Tensor> Backward(Var loss);
  // Reverse sweep seeded with externally supplied output gradients, e.g. the
  // gradient of a published virtual node returned by another party.
  std::map<NodeId, Tensor> BackwardFrom(
      std::span<const std::pair<Var, Tensor>> seeds);

  // Gradient accumulated at `id` by the last sweep; nullptr if none reached.
  const std::vector<double>* grad(NodeId id) const;
  Tensor GradTensor(NodeId id) const;

  // Adds the last sweep's leaf gradients into the bound Parameter::grad.
  void AccumulateParameterGradients() const;

  // Leaf kinds reachable from `id` through value-preserving ops only.
  std::set<LeafKind> DirectProvenance(NodeId id) const;
  // True if any ancestor leaf (through any op) has the given kind.
  bool DependsOn(NodeId id, LeafKind kind) const;

  // Op-implementation helpers.
  std::span<double> MutableGrad(NodeId id);

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    LeafKind leaf_kind = LeafKind::kConstant;
    bool requires_grad = false;
    std::string label;
    Tensor value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    Parameter* parameter = nullptr;
  };

  void Sweep(NodeId last);
  std::map<NodeId, Tensor> LeafGradients(NodeId last) const;

  std::deque<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

// ---------------------------------------------------------------------------
// Operations. Every op validates shapes and throws ShapeError naming the op
// and the offending shapes. Rank-2 operands are "unbatched"; rank-3 operands
// carry a leading batch axis.

// (n,k)x(k,m); a rank-2 operand is shared across the other's batch.
Var MatMul(Var a, Var b);
Var Add(Var a, Var b);
Var Sub(Var a, Var b);
// Elementwise product.
Var Mul(Var a, Var b);
// Adds a (1, cols) row vector to every row.
Var AddBias(Var x, Var bias);
// scale * x + shift, elementwise.
Var Affine(Var x, double scale, double shift);
inline Var Scale(Var x, double s) { return Affine(x, s, 0.0); }
Var ConcatRows(std::span<const Var> parts);
Var ConcatCols(std::span<const Var> parts);
// Half-open [begin, end) along rows / cols.
Var SliceRows(Var x, std::size_t begin, std::size_t end);
Var SliceCols(Var x, std::size_t begin, std::size_t end);
// Swaps the last two axes.
Var Transpose(Var x);
// Tiles a rank-2 tensor into (batch, rows, cols).
Var BroadcastBatch(Var x, std::size_t batch);
// Gradient at exactly 0 is 0.
Var Relu(Var x);
Var Sigmoid(Var x);
Var Tanh(Var x);
// Normalizes along the last axis.
Var SoftmaxRows(Var x);
// Euclidean norm of every row; output has one column.
Var L2NormRows(Var x);
// Multiplies every row of x by the matching entry of the one-column `scale`.
Var RowScale(Var x, Var scale);
// min(1, bound / n) elementwise, for n >= 0.
Var ClipFactor(Var norms, double bound);
Var Abs(Var x);
// x^p for x >= 0; derivative at x == 0 taken as 0 when p < 1.
Var Pow(Var x, double p);
Var Sum(Var x);
Var Mean(Var x);

// Uniform dispatch over the basic kernel set.
struct OpArgs {
  std::size_t begin = 0;
  std::size_t end = 0;
};
Var ApplyOp(OpKind kind, std::span<const Var> inputs, const OpArgs& args = {});

}  // namespace stfed

#endif  // STFED_TAPE_H_
