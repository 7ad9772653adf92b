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

#include "stfed/vna.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stfed {

Tensor KnnMatrix(const Tensor& distances, std::size_t k) {
  if (distances.rank() != 2) {
    throw ShapeError("knn: distances must be rank 2, got " +
                     ShapeToString(distances.shape()));
  }
  const std::size_t np = distances.rows(), na = distances.cols();
  if (k < 1 || k > np) {
    throw Error("knn: k = " + std::to_string(k) + " outside [1, " +
                std::to_string(np) + "]");
  }
  Tensor out({na, np});
  std::vector<std::size_t> order(np);
  for (std::size_t j = 0; j < na; ++j) {
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double da = distances.at(a, j);
                        const double db = distances.at(b, j);
                        return da < db || (da == db && a < b);
                      });
    for (std::size_t i = 0; i < k; ++i) out.at(j, order[i]) = 1.0;
  }
  return out;
}

namespace {

// (rows, cols) uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor UniformMatrix(std::size_t rows, std::size_t cols, std::size_t fan_in,
                     std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t({rows, cols});
  for (double& v : t.mutable_values()) v = dist(rng);
  return t;
}

}  // namespace

std::size_t HeadWidth(const VnaDims& dims) {
  if (dims.heads == 0) throw Error("vna: head count must be positive");
  if (dims.head_value_width != 0) {
    if (dims.head_value_width % dims.heads != 0) {
      throw Error("vna: head value width " +
                  std::to_string(dims.head_value_width) +
                  " is not divisible by " + std::to_string(dims.heads) +
                  " heads");
    }
    return dims.head_value_width / dims.heads;
  }
  const std::size_t nodes = dims.num_passive + dims.num_active;
  return (nodes + dims.heads - 1) / dims.heads;
}

VirtualNodeGenerator::VirtualNodeGenerator(const std::string& name,
                                           const VnaDims& dims, Tensor knn,
                                           std::mt19937_64& rng)
    : dims_(dims), knn_(std::move(knn)) {
  const std::size_t np = dims.num_passive, na = dims.num_active;
  const std::size_t hp = dims.passive_hidden, ha = dims.active_hidden;
  if (np == 0 || na == 0 || hp == 0 || ha == 0 || dims.adaptive_rank == 0) {
    throw ShapeError("vna: all dimensions must be positive");
  }
  if (knn_.shape() != Shape{na, np}) {
    throw ShapeError("vna: knn matrix " + ShapeToString(knn_.shape()) +
                     " does not match (N^A, N^P) = " +
                     ShapeToString({na, np}));
  }
  const std::size_t dh = HeadWidth(dims);
  w_dis = LinearLayer(name + "/w_dis", hp, ha, true, rng);
  w_a1 = Parameter(name + "/w_a1", UniformMatrix(np, dims.adaptive_rank,
                                                 dims.adaptive_rank, rng));
  w_a2 = Parameter(name + "/w_a2", UniformMatrix(na, dims.adaptive_rank,
                                                 dims.adaptive_rank, rng));
  w_adp = LinearLayer(name + "/w_adp", hp, ha, true, rng);
  pos_passive =
      Parameter(name + "/pos_passive", UniformMatrix(np, hp, hp, rng));
  pos_virtual =
      Parameter(name + "/pos_virtual", UniformMatrix(na, hp, hp, rng));
  for (std::size_t i = 0; i < dims.heads; ++i) {
    const std::string h = std::to_string(i);
    w_q.emplace_back(name + "/w_q" + h, ScaledUniform(hp, dh, rng));
    w_k.emplace_back(name + "/w_k" + h, ScaledUniform(hp, dh, rng));
    w_v.emplace_back(name + "/w_v" + h, ScaledUniform(hp, dh, rng));
  }
  w_1 = LinearLayer(name + "/w_1", dims.heads * dh, ha, true, rng);
  w_2 = LinearLayer(name + "/w_2", ha, ha, true, rng);
}

Var VirtualNodeGenerator::Distance(Binder& b, Var z) {
  return w_dis.Forward(b, MatMul(b.tape().Constant(knn_), z));
}

Var VirtualNodeGenerator::Adaptive(Binder& b, Var z, Var* mixing) {
  // Scores are (N^P, N^A); normalizing over the passive axis makes every
  // virtual node a convex mix of passive rows.
  Var scores = Relu(MatMul(b(w_a1), Transpose(b(w_a2))));
  Var mix = SoftmaxRows(Transpose(scores));
  if (mixing != nullptr) *mixing = mix;
  return w_adp.Forward(b, MatMul(mix, z));
}

Var VirtualNodeGenerator::Dynamic(Binder& b, Var z,
                                  std::vector<Var>* attention) {
  const Tensor& zv = z.value();
  if (zv.rows() != dims_.num_passive || zv.cols() != dims_.passive_hidden) {
    throw ShapeError("vna dynamic: representation " +
                     ShapeToString(zv.shape()) + " does not match (N^P, H^P)");
  }
  Var pos_p = b(pos_passive);
  Var pos_v = b(pos_virtual);
  if (zv.rank() == 3) {
    pos_p = BroadcastBatch(pos_p, zv.batch());
    pos_v = BroadcastBatch(pos_v, zv.batch());
  }
  const Var parts[] = {Add(z, pos_p), pos_v};
  Var x_in = ConcatRows(parts);
  // Queries come from the unbatched virtual-node embeddings.
  Var x_out = b(pos_virtual);
  const double scale = 1.0 / std::sqrt(static_cast<double>(HeadWidth(dims_)));
  std::vector<Var> heads;
  if (attention != nullptr) attention->clear();
  for (std::size_t i = 0; i < dims_.heads; ++i) {
    Var q = MatMul(x_out, b(w_q[i]));
    Var k = MatMul(x_in, b(w_k[i]));
    Var v = MatMul(x_in, b(w_v[i]));
    Var a = SoftmaxRows(Scale(MatMul(q, Transpose(k)), scale));
    if (attention != nullptr) attention->push_back(a);
    heads.push_back(MatMul(a, v));
  }
  return w_2.Forward(b, Relu(w_1.Forward(b, ConcatCols(heads))));
}

Var VirtualNodeGenerator::Generate(Binder& b, Var z) {
  return FuseVirtualNode(Distance(b, z), Adaptive(b, z), Dynamic(b, z));
}

void VirtualNodeGenerator::AppendParameters(ParameterList& out) {
  w_dis.AppendParameters(out);
  out.push_back(&w_a1);
  out.push_back(&w_a2);
  w_adp.AppendParameters(out);
  out.push_back(&pos_passive);
  out.push_back(&pos_virtual);
  for (std::size_t i = 0; i < w_q.size(); ++i) {
    out.push_back(&w_q[i]);
    out.push_back(&w_k[i]);
    out.push_back(&w_v[i]);
  }
  w_1.AppendParameters(out);
  w_2.AppendParameters(out);
}

Var FuseVirtualNode(Var v_dis, Var v_adp, Var v_dyn) {
  return Relu(Add(Add(v_dis, v_adp), v_dyn));
}

// ---------------------------------------------------------------------------

double DpConfig::Sigma() const {
  if (!std::isfinite(epsilon)) return 0.0;
  return std::sqrt(2.0 * std::log(1.25 / delta)) / epsilon;
}

void DpConfig::Validate() const {
  if (!(epsilon > 0.0)) throw Error("dp: epsilon must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw Error("dp: delta must be in (0, 1)");
  if (!(clip > 0.0) || !std::isfinite(clip)) {
    throw Error("dp: clip bound must be positive and finite");
  }
}

ProtectedNode DpProtect(Var v, const DpConfig& config, std::mt19937_64& rng,
                        bool add_noise) {
  config.Validate();
  ProtectedNode out;
  out.clipped = RowScale(v, ClipFactor(L2NormRows(v), config.clip));
  if (!add_noise || !config.noisy()) {
    out.published = out.clipped;
    return out;
  }
  std::normal_distribution<double> normal(0.0, config.NoiseStd());
  Tensor noise(v.shape());
  for (double& x : noise.mutable_values()) x = normal(rng);
  out.published =
      Add(out.clipped, v.tape()->Leaf(std::move(noise), LeafKind::kConstant,
                                      false, "dp-noise"));
  return out;
}

// ---------------------------------------------------------------------------

GatedFusion::GatedFusion(const std::string& name, std::size_t hidden,
                         std::mt19937_64& rng)
    : g1(name + "/g1", hidden, hidden, true, rng),
      g2(name + "/g2", hidden, hidden, false, rng) {}

Var GatedFusion::Forward(Binder& b, Var v, Var o, Var* gate) {
  if (v.shape() != o.shape()) {
    throw ShapeError("gated fusion: virtual node " + ShapeToString(v.shape()) +
                     " does not match representation " +
                     ShapeToString(o.shape()));
  }
  Var g = Sigmoid(Add(g1.Forward(b, v), g2.Forward(b, o)));
  if (gate != nullptr) *gate = g;
  return Add(Mul(g, o), Mul(Affine(g, -1.0, 1.0), v));
}

void GatedFusion::AppendParameters(ParameterList& out) {
  g1.AppendParameters(out);
  g2.AppendParameters(out);
}

}  // namespace stfed
