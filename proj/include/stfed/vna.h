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

// Virtual node alignment: turns a passive party's (N^P, H) representation
// into N^A virtual nodes, one per active series, then clips and noises them
// before publication. The gate that mixes a received virtual node into the
// active party's representation lives here too.

#ifndef STFED_VNA_H_
#define STFED_VNA_H_

#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "stfed/local_models.h"
#include "stfed/parameter.h"
#include "stfed/tape.h"

namespace stfed {

// Binary (N^A, N^P) selection of the k nearest passive series for every
// active series; ties go to the lower passive index. `distances` is
// (N^P, N^A).
Tensor KnnMatrix(const Tensor& distances, std::size_t k);

struct VnaDims {
  std::size_t num_passive = 0;     // N^P
  std::size_t num_active = 0;      // N^A
  std::size_t passive_hidden = 0;  // H^P
  std::size_t active_hidden = 0;   // H^A
  std::size_t heads = 2;
  std::size_t adaptive_rank = 10;
  // Total value width over all heads; 0 selects
  // heads * ceil((N^P + N^A) / heads). Must be divisible by `heads`.
  std::size_t head_value_width = 0;
};

// Width of one attention head.
std::size_t HeadWidth(const VnaDims& dims);

// Generation half of one alignment level, owned by the passive party.
class VirtualNodeGenerator {
 public:
  VirtualNodeGenerator() = default;
  VirtualNodeGenerator(const std::string& name, const VnaDims& dims,
                       Tensor knn, std::mt19937_64& rng);

  // z: (B, N^P, H^P) or (N^P, H^P). Outputs have N^A rows and H^A columns.
  Var Distance(Binder& b, Var z);
  // `mixing`, if given, receives the row-stochastic (N^A, N^P) matrix.
  Var Adaptive(Binder& b, Var z, Var* mixing = nullptr);
  // `attention`, if given, receives one (N^A, N^P + N^A) matrix per head
  // (batched when z is).
  Var Dynamic(Binder& b, Var z, std::vector<Var>* attention = nullptr);
  // relu(v_dis + v_adp + v_dyn).
  Var Generate(Binder& b, Var z);

  void AppendParameters(ParameterList& out);
  const VnaDims& dims() const { return dims_; }
  const Tensor& knn() const { return knn_; }

  LinearLayer w_dis;
  Parameter w_a1;  // (N^P, d)
  Parameter w_a2;  // (N^A, d)
  LinearLayer w_adp;
  Parameter pos_passive;  // X_zP, (N^P, H^P)
  Parameter pos_virtual;  // X_vP, (N^A, H^P)
  std::vector<Parameter> w_q;
  std::vector<Parameter> w_k;
  std::vector<Parameter> w_v;
  LinearLayer w_1;
  LinearLayer w_2;

 private:
  VnaDims dims_;
  Tensor knn_;
};

Var FuseVirtualNode(Var v_dis, Var v_adp, Var v_dyn);

struct DpConfig {
  double epsilon = std::numeric_limits<double>::infinity();
  double delta = 1e-4;
  double clip = 1.0;

  // sqrt(2 ln(1.25 / delta)) / epsilon; 0 when epsilon is infinite.
  double Sigma() const;
  double NoiseStd() const { return Sigma() * clip; }
  bool noisy() const { return std::isfinite(epsilon); }
  // Throws Error on epsilon <= 0, delta outside (0, 1) or clip <= 0.
  void Validate() const;
};

struct ProtectedNode {
  Var clipped;
  Var published;
};

// Scales every row to norm at most `clip`, then adds fresh Gaussian noise
// with standard deviation sigma * clip when epsilon is finite and
// `add_noise` is set. The noise enters the tape as a constant.
ProtectedNode DpProtect(Var v, const DpConfig& config, std::mt19937_64& rng,
                        bool add_noise = true);

// Active-side gate: G = sigmoid(v W_G1 + o W_G2 + b), h = G*o + (1-G)*v.
class GatedFusion {
 public:
  GatedFusion() = default;
  GatedFusion(const std::string& name, std::size_t hidden,
              std::mt19937_64& rng);

  Var Forward(Binder& b, Var v, Var o, Var* gate = nullptr);
  void AppendParameters(ParameterList& out);

  LinearLayer g1;
  LinearLayer g2;
};

}  // namespace stfed

#endif  // STFED_VNA_H_
