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

#include "stfed/tape.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stfed/parameter.h"

namespace stfed {

std::string_view OpKindName(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kAddBias: return "add-bias";
    case OpKind::kAffine: return "affine";
    case OpKind::kConcatRows: return "concat-rows";
    case OpKind::kConcatCols: return "concat-cols";
    case OpKind::kSliceRows: return "slice-rows";
    case OpKind::kSliceCols: return "slice-cols";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kBroadcastBatch: return "broadcast-batch";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSoftmaxRows: return "softmax-rows";
    case OpKind::kL2NormRows: return "l2norm-rows";
    case OpKind::kRowScale: return "row-scale";
    case OpKind::kClipFactor: return "clip-factor";
    case OpKind::kAbs: return "abs";
    case OpKind::kPow: return "pow";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
  }
  return "unknown";
}

bool IsValuePreserving(OpKind kind) {
  switch (kind) {
    case OpKind::kConcatRows:
    case OpKind::kConcatCols:
    case OpKind::kSliceRows:
    case OpKind::kSliceCols:
    case OpKind::kTranspose:
    case OpKind::kBroadcastBatch:
      return true;
    default:
      return false;
  }
}

std::string_view LeafKindName(LeafKind kind) {
  switch (kind) {
    case LeafKind::kParameter: return "parameter";
    case LeafKind::kRawInput: return "raw-input";
    case LeafKind::kConstant: return "constant";
    case LeafKind::kReceived: return "received";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw Error("use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::Leaf(Tensor value, LeafKind kind, bool requires_grad,
               std::string label) {
  Node node;
  node.kind = OpKind::kLeaf;
  node.leaf_kind = kind;
  node.requires_grad = requires_grad;
  node.label = std::move(label);
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::Param(Parameter& parameter) {
  Var v = Leaf(parameter.value, LeafKind::kParameter, true, parameter.name);
  nodes_[v.id()].parameter = &parameter;
  return v;
}

Var Tape::Record(OpKind kind, Tensor value, std::vector<NodeId> inputs,
                 BackwardFn backward) {
  Node node;
  node.kind = kind;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](NodeId i) {
    return nodes_[i].requires_grad;
  });
  if (node.requires_grad) node.backward = std::move(backward);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::MutableGrad(NodeId id) {
  auto& g = grads_[id];
  if (g.empty()) g.assign(nodes_[id].value.size(), 0.0);
  return g;
}

const std::vector<double>* Tape::grad(NodeId id) const {
  if (id >= grads_.size() || grads_[id].empty()) return nullptr;
  return &grads_[id];
}

Tensor Tape::GradTensor(NodeId id) const {
  const auto* g = grad(id);
  if (g == nullptr) return Tensor::Zeros(nodes_[id].value.shape());
  return Tensor(nodes_[id].value.shape(), *g);
}

void Tape::Sweep(NodeId last) {
  for (NodeId id = last + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (node.backward && !grads_[id].empty()) node.backward(*this, id);
  }
}

std::map<NodeId, Tensor> Tape::LeafGradients(NodeId last) const {
  std::map<NodeId, Tensor> out;
  for (NodeId id = 0; id <= last; ++id) {
    const Node& node = nodes_[id];
    if (node.kind == OpKind::kLeaf && node.requires_grad) {
      out.emplace(id, GradTensor(id));
    }
  }
  return out;
}

std::map<NodeId, Tensor> Tape::Backward(Var loss) {
  if (loss.tape() != this) throw Error("Backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw Error("Backward: loss must be a scalar, got shape " +
                ShapeToString(loss.shape()));
  }
  grads_.assign(nodes_.size(), {});
  grads_[loss.id()] = {1.0};
  Sweep(loss.id());
  return LeafGradients(loss.id());
}

std::map<NodeId, Tensor> Tape::BackwardFrom(
    std::span<const std::pair<Var, Tensor>> seeds) {
  grads_.assign(nodes_.size(), {});
  NodeId last = 0;
  for (const auto& [var, g] : seeds) {
    if (var.tape() != this) {
      throw Error("BackwardFrom: seed belongs to another tape");
    }
    if (g.shape() != var.shape()) {
      throw ShapeError("BackwardFrom: seed gradient shape " +
                       ShapeToString(g.shape()) + " does not match node " +
                       ShapeToString(var.shape()));
    }
    auto dst = MutableGrad(var.id());
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    last = std::max(last, var.id());
  }
  if (seeds.empty()) return {};
  Sweep(last);
  return LeafGradients(last);
}

void Tape::AccumulateParameterGradients() const {
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (node.parameter == nullptr) continue;
    const auto* g = grad(id);
    if (g == nullptr) continue;
    auto dst = node.parameter->grad.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += (*g)[i];
  }
}

std::set<LeafKind> Tape::DirectProvenance(NodeId id) const {
  std::set<LeafKind> out;
  std::vector<NodeId> stack = {id};
  while (!stack.empty()) {
    const NodeId cur = stack.back();
    stack.pop_back();
    const Node& node = nodes_[cur];
    if (node.kind == OpKind::kLeaf) {
      out.insert(node.leaf_kind);
    } else if (IsValuePreserving(node.kind)) {
      stack.insert(stack.end(), node.inputs.begin(), node.inputs.end());
    }
  }
  return out;
}

bool Tape::DependsOn(NodeId id, LeafKind kind) const {
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<NodeId> stack = {id};
  while (!stack.empty()) {
    const NodeId cur = stack.back();
    stack.pop_back();
    if (seen[cur]) continue;
    seen[cur] = true;
    const Node& node = nodes_[cur];
    if (node.kind == OpKind::kLeaf && node.leaf_kind == kind) return true;
    stack.insert(stack.end(), node.inputs.begin(), node.inputs.end());
  }
  return false;
}

namespace {

Tape& SameTape(std::string_view op, std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw Error(std::string(op) + ": unbound operand");
    if (tape == nullptr) {
      tape = v.tape();
    } else if (v.tape() != tape) {
      throw Error(std::string(op) + ": operands recorded on different tapes");
    }
  }
  return *tape;
}

[[noreturn]] void ShapeMismatch(std::string_view op, const Shape& a,
                                const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " +
                   ShapeToString(a) + " and " + ShapeToString(b));
}

[[noreturn]] void BadShape(std::string_view op, const Shape& a,
                           const std::string& why) {
  throw ShapeError(std::string(op) + ": " + why + ", got shape " +
                   ShapeToString(a));
}

// Matrix multiply kernels on contiguous row-major blocks.
void GemmAccumulate(const double* a, const double* b, double* c, std::size_t n,
                    std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * m;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA += dC * B^T
void GemmGradA(const double* dc, const double* b, double* da, std::size_t n,
               std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* grow = dc + i * m;
    double* darow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
      darow[p] += s;
    }
  }
}

// dB += A^T * dC
void GemmGradB(const double* a, const double* dc, double* db, std::size_t n,
               std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* grow = dc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* dbrow = db + p * m;
      for (std::size_t j = 0; j < m; ++j) dbrow[j] += av * grow[j];
    }
  }
}

template <typename F, typename DF>
Var Unary(OpKind kind, Var x, F f, DF df) {
  Tape& tape = SameTape(OpKindName(kind), {x});
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  const NodeId ix = x.id();
  return tape.Record(kind, std::move(out), {ix},
                     [ix, df](Tape& t, NodeId self) {
                       const auto& g = *t.grad(self);
                       const Tensor& xin = t.value(ix);
                       const Tensor& y = t.value(self);
                       auto dx = t.MutableGrad(ix);
                       for (std::size_t i = 0; i < dx.size(); ++i) {
                         dx[i] += g[i] * df(xin[i], y[i]);
                       }
                     });
}

double StableSigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var MatMul(Var a, Var b) {
  Tape& tape = SameTape("matmul", {a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows() ||
      (av.rank() == 3 && bv.rank() == 3 && av.batch() != bv.batch())) {
    ShapeMismatch("matmul", av.shape(), bv.shape());
  }
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  const bool batched = av.rank() == 3 || bv.rank() == 3;
  const std::size_t batch = std::max(av.batch(), bv.batch());
  const std::size_t sa = av.rank() == 3 ? n * k : 0;
  const std::size_t sb = bv.rank() == 3 ? k * m : 0;
  Tensor out(batched ? Shape{batch, n, m} : Shape{n, m});
  for (std::size_t i = 0; i < batch; ++i) {
    GemmAccumulate(av.values().data() + i * sa, bv.values().data() + i * sb,
                   out.mutable_values().data() + i * n * m, n, k, m);
  }
  const NodeId ia = a.id(), ib = b.id();
  return tape.Record(
      OpKind::kMatMul, std::move(out), {ia, ib},
      [=](Tape& t, NodeId self) {
        const double* g = t.grad(self)->data();
        const double* adata = t.value(ia).values().data();
        const double* bdata = t.value(ib).values().data();
        if (t.requires_grad(ia)) {
          double* da = t.MutableGrad(ia).data();
          for (std::size_t i = 0; i < batch; ++i) {
            GemmGradA(g + i * n * m, bdata + i * sb, da + i * sa, n, k, m);
          }
        }
        if (t.requires_grad(ib)) {
          double* db = t.MutableGrad(ib).data();
          for (std::size_t i = 0; i < batch; ++i) {
            GemmGradB(adata + i * sa, g + i * n * m, db + i * sb, n, k, m);
          }
        }
      });
}

namespace {

enum class Binary { kAdd, kSub, kMul };

Var Elementwise(Binary which, OpKind kind, Var a, Var b) {
  Tape& tape = SameTape(OpKindName(kind), {a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    ShapeMismatch(OpKindName(kind), av.shape(), bv.shape());
  }
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    switch (which) {
      case Binary::kAdd: out[i] = av[i] + bv[i]; break;
      case Binary::kSub: out[i] = av[i] - bv[i]; break;
      case Binary::kMul: out[i] = av[i] * bv[i]; break;
    }
  }
  const NodeId ia = a.id(), ib = b.id();
  return tape.Record(kind, std::move(out), {ia, ib},
                     [=](Tape& t, NodeId self) {
                       const auto& g = *t.grad(self);
                       if (t.requires_grad(ia)) {
                         auto da = t.MutableGrad(ia);
                         const Tensor& bval = t.value(ib);
                         for (std::size_t i = 0; i < da.size(); ++i) {
                           da[i] += which == Binary::kMul ? g[i] * bval[i]
                                                          : g[i];
                         }
                       }
                       if (t.requires_grad(ib)) {
                         auto db = t.MutableGrad(ib);
                         const Tensor& aval = t.value(ia);
                         for (std::size_t i = 0; i < db.size(); ++i) {
                           switch (which) {
                             case Binary::kAdd: db[i] += g[i]; break;
                             case Binary::kSub: db[i] -= g[i]; break;
                             case Binary::kMul: db[i] += g[i] * aval[i]; break;
                           }
                         }
                       }
                     });
}

}  // namespace

Var Add(Var a, Var b) { return Elementwise(Binary::kAdd, OpKind::kAdd, a, b); }
Var Sub(Var a, Var b) { return Elementwise(Binary::kSub, OpKind::kSub, a, b); }
Var Mul(Var a, Var b) { return Elementwise(Binary::kMul, OpKind::kMul, a, b); }

Var AddBias(Var x, Var bias) {
  Tape& tape = SameTape("add-bias", {x, bias});
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rank() != 2 || bv.rows() != 1 || bv.cols() != xv.cols()) {
    ShapeMismatch("add-bias", xv.shape(), bv.shape());
  }
  const std::size_t c = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + bv[i % c];
  const NodeId ix = x.id(), ib = bias.id();
  return tape.Record(OpKind::kAddBias, std::move(out), {ix, ib},
                     [=](Tape& t, NodeId self) {
                       const auto& g = *t.grad(self);
                       if (t.requires_grad(ix)) {
                         auto dx = t.MutableGrad(ix);
                         for (std::size_t i = 0; i < dx.size(); ++i) {
                           dx[i] += g[i];
                         }
                       }
                       if (t.requires_grad(ib)) {
                         auto db = t.MutableGrad(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           db[i % c] += g[i];
                         }
                       }
                     });
}

Var Affine(Var x, double scale, double shift) {
  return Unary(
      OpKind::kAffine, x, [=](double v) { return scale * v + shift; },
      [=](double, double) { return scale; });
}

namespace {

// Shared implementation of concat along rows (axis -2) or cols (axis -1).
Var Concat(std::span<const Var> parts, bool along_rows) {
  const std::string_view op = along_rows ? "concat-rows" : "concat-cols";
  if (parts.empty()) throw ShapeError(std::string(op) + ": no operands");
  Tape* tape = parts.front().tape();
  const Tensor& first = parts.front().value();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape() != tape) {
      throw Error(std::string(op) + ": operands recorded on different tapes");
    }
    const Tensor& v = p.value();
    const bool same_other_dim =
        along_rows ? v.cols() == first.cols() : v.rows() == first.rows();
    if (v.rank() != first.rank() || v.batch() != first.batch() ||
        !same_other_dim) {
      ShapeMismatch(op, first.shape(), v.shape());
    }
    total += along_rows ? v.rows() : v.cols();
  }
  const std::size_t batch = first.batch();
  const std::size_t rows = along_rows ? total : first.rows();
  const std::size_t cols = along_rows ? first.cols() : total;
  Shape shape = first.rank() == 3 ? Shape{batch, rows, cols}
                                  : Shape{rows, cols};
  Tensor out(shape);
  std::vector<NodeId> ids;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t r = 0; r < v.rows(); ++r) {
        for (std::size_t c = 0; c < v.cols(); ++c) {
          const std::size_t orow = along_rows ? offset + r : r;
          const std::size_t ocol = along_rows ? c : offset + c;
          out[(b * rows + orow) * cols + ocol] =
              v[(b * v.rows() + r) * v.cols() + c];
        }
      }
    }
    ids.push_back(p.id());
    offsets.push_back(offset);
    offset += along_rows ? v.rows() : v.cols();
  }
  return tape->Record(
      along_rows ? OpKind::kConcatRows : OpKind::kConcatCols, std::move(out),
      ids, [=](Tape& t, NodeId self) {
        const auto& g = *t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          const Tensor& v = t.value(ids[k]);
          auto dv = t.MutableGrad(ids[k]);
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t r = 0; r < v.rows(); ++r) {
              for (std::size_t c = 0; c < v.cols(); ++c) {
                const std::size_t orow = along_rows ? offsets[k] + r : r;
                const std::size_t ocol = along_rows ? c : offsets[k] + c;
                dv[(b * v.rows() + r) * v.cols() + c] +=
                    g[(b * rows + orow) * cols + ocol];
              }
            }
          }
        }
      });
}

Var Slice(Var x, std::size_t begin, std::size_t end, bool along_rows) {
  const std::string_view op = along_rows ? "slice-rows" : "slice-cols";
  Tape& tape = SameTape(op, {x});
  const Tensor& v = x.value();
  const std::size_t extent = along_rows ? v.rows() : v.cols();
  if (begin >= end || end > extent) {
    BadShape(op,
             v.shape(),
             "range [" + std::to_string(begin) + ", " + std::to_string(end) +
                 ") out of bounds");
  }
  const std::size_t batch = v.batch();
  const std::size_t rows = along_rows ? end - begin : v.rows();
  const std::size_t cols = along_rows ? v.cols() : end - begin;
  Tensor out(v.rank() == 3 ? Shape{batch, rows, cols} : Shape{rows, cols});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t ir = along_rows ? begin + r : r;
        const std::size_t ic = along_rows ? c : begin + c;
        out[(b * rows + r) * cols + c] = v[(b * v.rows() + ir) * v.cols() + ic];
      }
    }
  }
  const NodeId ix = x.id();
  const std::size_t in_rows = v.rows(), in_cols = v.cols();
  return tape.Record(
      along_rows ? OpKind::kSliceRows : OpKind::kSliceCols, std::move(out),
      {ix}, [=](Tape& t, NodeId self) {
        const auto& g = *t.grad(self);
        auto dx = t.MutableGrad(ix);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t ir = along_rows ? begin + r : r;
              const std::size_t ic = along_rows ? c : begin + c;
              dx[(b * in_rows + ir) * in_cols + ic] +=
                  g[(b * rows + r) * cols + c];
            }
          }
        }
      });
}

}  // namespace

Var ConcatRows(std::span<const Var> parts) { return Concat(parts, true); }
Var ConcatCols(std::span<const Var> parts) { return Concat(parts, false); }

Var SliceRows(Var x, std::size_t begin, std::size_t end) {
  return Slice(x, begin, end, true);
}
Var SliceCols(Var x, std::size_t begin, std::size_t end) {
  return Slice(x, begin, end, false);
}

Var Transpose(Var x) {
  Tape& tape = SameTape("transpose", {x});
  const Tensor& v = x.value();
  const std::size_t batch = v.batch(), rows = v.rows(), cols = v.cols();
  Tensor out(v.rank() == 3 ? Shape{batch, cols, rows} : Shape{cols, rows});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        out[(b * cols + c) * rows + r] = v[(b * rows + r) * cols + c];
      }
    }
  }
  const NodeId ix = x.id();
  return tape.Record(OpKind::kTranspose, std::move(out), {ix},
                     [=](Tape& t, NodeId self) {
                       const auto& g = *t.grad(self);
                       auto dx = t.MutableGrad(ix);
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < cols; ++c) {
                             dx[(b * rows + r) * cols + c] +=
                                 g[(b * cols + c) * rows + r];
                           }
                         }
                       }
                     });
}

Var BroadcastBatch(Var x, std::size_t batch) {
  Tape& tape = SameTape("broadcast-batch", {x});
  const Tensor& v = x.value();
  if (v.rank() != 2 || batch == 0) {
    BadShape("broadcast-batch", v.shape(), "expects a rank-2 operand");
  }
  const std::size_t n = v.size();
  std::vector<double> values;
  values.reserve(batch * n);
  for (std::size_t b = 0; b < batch; ++b) {
    values.insert(values.end(), v.values().begin(), v.values().end());
  }
  const NodeId ix = x.id();
  return tape.Record(OpKind::kBroadcastBatch,
                     Tensor({batch, v.rows(), v.cols()}, std::move(values)),
                     {ix}, [=](Tape& t, NodeId self) {
                       const auto& g = *t.grad(self);
                       auto dx = t.MutableGrad(ix);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         dx[i % n] += g[i];
                       }
                     });
}

Var Relu(Var x) {
  return Unary(
      OpKind::kRelu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var Sigmoid(Var x) {
  return Unary(
      OpKind::kSigmoid, x, StableSigmoid,
      [](double, double y) { return y * (1.0 - y); });
}

Var Tanh(Var x) {
  return Unary(
      OpKind::kTanh, x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var Abs(Var x) {
  return Unary(
      OpKind::kAbs, x, [](double v) { return std::abs(v); },
      [](double v, double) {
        return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      });
}

Var Pow(Var x, double p) {
  for (double v : x.value().values()) {
    if (v < 0.0) {
      throw Error("pow: negative base " + std::to_string(v));
    }
  }
  return Unary(
      OpKind::kPow, x, [p](double v) { return std::pow(v, p); },
      [p](double v, double) {
        if (v == 0.0) return p == 1.0 ? 1.0 : 0.0;
        return p * std::pow(v, p - 1.0);
      });
}

Var ClipFactor(Var norms, double bound) {
  if (!(bound > 0.0)) throw Error("clip-factor: bound must be positive");
  return Unary(
      OpKind::kClipFactor, norms,
      [bound](double n) { return n > bound ? bound / n : 1.0; },
      [bound](double n, double) { return n > bound ? -bound / (n * n) : 0.0; });
}

Var SoftmaxRows(Var x) {
  Tape& tape = SameTape("softmax-rows", {x});
  const Tensor& v = x.value();
  const std::size_t cols = v.cols();
  const std::size_t rows = v.size() / cols;
  Tensor out(v.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.values().data() + r * cols;
    double* o = out.mutable_values().data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      z += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  const NodeId ix = x.id();
  return tape.Record(OpKind::kSoftmaxRows, std::move(out), {ix},
                     [=](Tape& t, NodeId self) {
                       const auto& g = *t.grad(self);
                       const Tensor& y = t.value(self);
                       auto dx = t.MutableGrad(ix);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) {
                           dot += g[r * cols + c] * y[r * cols + c];
                         }
                         for (std::size_t c = 0; c < cols; ++c) {
                           dx[r * cols + c] +=
                               y[r * cols + c] * (g[r * cols + c] - dot);
                         }
                       }
                     });
}

Var L2NormRows(Var x) {
  Tape& tape = SameTape("l2norm-rows", {x});
  const Tensor& v = x.value();
  const std::size_t cols = v.cols();
  const std::size_t rows = v.size() / cols;
  Tensor out(v.rank() == 3 ? Shape{v.batch(), v.rows(), 1}
                           : Shape{v.rows(), 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      s += v[r * cols + c] * v[r * cols + c];
    }
    out[r] = std::sqrt(s);
  }
  const NodeId ix = x.id();
  return tape.Record(OpKind::kL2NormRows, std::move(out), {ix},
                     [=](Tape& t, NodeId self) {
                       const auto& g = *t.grad(self);
                       const Tensor& n = t.value(self);
                       const Tensor& xin = t.value(ix);
                       auto dx = t.MutableGrad(ix);
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (n[r] == 0.0) continue;
                         const double s = g[r] / n[r];
                         for (std::size_t c = 0; c < cols; ++c) {
                           dx[r * cols + c] += s * xin[r * cols + c];
                         }
                       }
                     });
}

Var RowScale(Var x, Var scale) {
  Tape& tape = SameTape("row-scale", {x, scale});
  const Tensor& v = x.value();
  const Tensor& s = scale.value();
  if (s.rank() != v.rank() || s.batch() != v.batch() ||
      s.rows() != v.rows() || s.cols() != 1) {
    ShapeMismatch("row-scale", v.shape(), s.shape());
  }
  const std::size_t cols = v.cols();
  const std::size_t rows = v.size() / cols;
  Tensor out(v.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = v[r * cols + c] * s[r];
    }
  }
  const NodeId ix = x.id(), is = scale.id();
  return tape.Record(OpKind::kRowScale, std::move(out), {ix, is},
                     [=](Tape& t, NodeId self) {
                       const auto& g = *t.grad(self);
                       const Tensor& xv = t.value(ix);
                       const Tensor& sv = t.value(is);
                       if (t.requires_grad(ix)) {
                         auto dx = t.MutableGrad(ix);
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < cols; ++c) {
                             dx[r * cols + c] += g[r * cols + c] * sv[r];
                           }
                         }
                       }
                       if (t.requires_grad(is)) {
                         auto ds = t.MutableGrad(is);
                         for (std::size_t r = 0; r < rows; ++r) {
                           double acc = 0.0;
                           for (std::size_t c = 0; c < cols; ++c) {
                             acc += g[r * cols + c] * xv[r * cols + c];
                           }
                           ds[r] += acc;
                         }
                       }
                     });
}

Var Sum(Var x) {
  Tape& tape = SameTape("sum", {x});
  const NodeId ix = x.id();
  return tape.Record(OpKind::kSum, Tensor::Scalar(x.value().Sum()), {ix},
                     [=](Tape& t, NodeId self) {
                       const double g = (*t.grad(self))[0];
                       for (double& d : t.MutableGrad(ix)) d += g;
                     });
}

Var Mean(Var x) {
  Tape& tape = SameTape("mean", {x});
  const double n = static_cast<double>(x.value().size());
  const NodeId ix = x.id();
  return tape.Record(OpKind::kMean, Tensor::Scalar(x.value().Sum() / n), {ix},
                     [=](Tape& t, NodeId self) {
                       const double g = (*t.grad(self))[0] / n;
                       for (double& d : t.MutableGrad(ix)) d += g;
                     });
}

Var ApplyOp(OpKind kind, std::span<const Var> inputs, const OpArgs& args) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw Error(std::string(OpKindName(kind)) + ": expects " +
                  std::to_string(n) + " inputs, got " +
                  std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::kMatMul: need(2); return MatMul(inputs[0], inputs[1]);
    case OpKind::kAdd: need(2); return Add(inputs[0], inputs[1]);
    case OpKind::kMul: need(2); return Mul(inputs[0], inputs[1]);
    case OpKind::kConcatRows: return ConcatRows(inputs);
    case OpKind::kRelu: need(1); return Relu(inputs[0]);
    case OpKind::kSigmoid: need(1); return Sigmoid(inputs[0]);
    case OpKind::kTanh: need(1); return Tanh(inputs[0]);
    case OpKind::kSoftmaxRows: need(1); return SoftmaxRows(inputs[0]);
    case OpKind::kL2NormRows: need(1); return L2NormRows(inputs[0]);
    case OpKind::kSliceRows:
      need(1);
      return SliceRows(inputs[0], args.begin, args.end);
    default:
      throw Error("ApplyOp: unsupported kind " +
                  std::string(OpKindName(kind)));
  }
}

}  // namespace stfed
