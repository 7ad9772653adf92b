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

// Per-party private models: GRU temporal stack, diffusion spatial stack and
// the prediction head.
//
// Inputs are windows flattened per series: a (batch, N, T * F) tensor whose
// column t * F + f holds feature f at step t. Rank-2 (N, T * F) inputs are
// accepted as a single unbatched window.

#ifndef STFED_LOCAL_MODELS_H_
#define STFED_LOCAL_MODELS_H_

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stfed/data.h"
#include "stfed/parameter.h"
#include "stfed/tape.h"

namespace stfed {

// Binds parameters to one tape, once per tape. A frozen binder enters
// parameters as constants so no gradient reaches them.
class Binder {
 public:
  explicit Binder(Tape& tape, bool frozen = false)
      : tape_(&tape), frozen_(frozen) {}

  Tape& tape() const { return *tape_; }
  Var operator()(Parameter& p);

 private:
  Tape* tape_;
  bool frozen_;
  std::unordered_map<const Parameter*, Var> bound_;
};

class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(const std::string& name, std::size_t in, std::size_t out,
              bool bias, std::mt19937_64& rng);

  Var Forward(Binder& b, Var x);
  void AppendParameters(ParameterList& out);
  std::size_t in() const { return weight.value.rows(); }
  std::size_t out() const { return weight.value.cols(); }

  Parameter weight;  // (in, out)
  Parameter bias;    // (1, out)
  bool has_bias = false;
};

// h' = (1 - z) * n + z * h with reset-gated candidate n.
class GruCell {
 public:
  GruCell() = default;
  GruCell(const std::string& name, std::size_t in, std::size_t hidden,
          std::mt19937_64& rng);

  Var Forward(Binder& b, Var x, Var h);
  void AppendParameters(ParameterList& out);
  std::size_t hidden() const { return hidden_; }

  // Input and recurrent projections for the [z | r | n] gates.
  LinearLayer input;
  LinearLayer recurrent;

 private:
  std::size_t hidden_ = 0;
};

class TemporalStack {
 public:
  TemporalStack() = default;
  TemporalStack(const std::string& name, std::size_t features,
                std::size_t history, std::size_t hidden, std::size_t layers,
                std::mt19937_64& rng);

  // (B, N, T * F) -> (B, N, H): the top layer's hidden state after the last
  // step. Throws ShapeError when the column count is not T * F.
  Var Forward(Binder& b, Var window);
  void AppendParameters(ParameterList& out);

  std::size_t features() const { return features_; }
  std::size_t history() const { return history_; }
  std::size_t hidden() const { return hidden_; }

  LinearLayer embedding;
  std::vector<GruCell> cells;

 private:
  std::size_t features_ = 0;
  std::size_t history_ = 0;
  std::size_t hidden_ = 0;
};

enum class Activation { kRelu, kLinear };

// Gaussian kernel over pairwise distances (bandwidth = median pairwise
// distance), entries below `threshold` dropped, self loops kept, rows
// normalized to sum to 1.
Tensor BuildAdjacency(std::span<const Point> coordinates,
                      double threshold = 0.1);

// o = act(A h W_self + h W_skip).
class SpatialLayer {
 public:
  SpatialLayer() = default;
  SpatialLayer(const std::string& name, std::size_t hidden,
               Activation activation, std::mt19937_64& rng);

  Var Forward(Binder& b, Var adjacency, Var h);
  void AppendParameters(ParameterList& out);

  Parameter w_self;
  Parameter w_skip;
  Activation activation = Activation::kRelu;
};

class SpatialStack {
 public:
  SpatialStack() = default;
  SpatialStack(const std::string& name, Tensor adjacency, std::size_t hidden,
               std::size_t layers, Activation activation,
               std::mt19937_64& rng);

  // Applies layer `m` (0-based) to `h`.
  Var Layer(Binder& b, std::size_t m, Var h);
  void AppendParameters(ParameterList& out);
  std::size_t size() const { return layers.size(); }

  Tensor adjacency;
  std::vector<SpatialLayer> layers;
};

// Linear -> relu -> Linear to horizon * F_out columns; column h * F_out + j
// holds feature j at lead h.
class PredictionHead {
 public:
  PredictionHead() = default;
  PredictionHead(const std::string& name, std::size_t hidden,
                 std::size_t inner, std::size_t horizon,
                 std::size_t out_features, std::mt19937_64& rng);

  Var Forward(Binder& b, Var h);
  void AppendParameters(ParameterList& out);
  std::size_t horizon() const { return horizon_; }
  std::size_t out_features() const { return out_features_; }

  LinearLayer first;
  LinearLayer second;

 private:
  std::size_t horizon_ = 0;
  std::size_t out_features_ = 0;
};

// Prediction entry for (series, lead, feature) in an unbatched head output.
double PredictionAt(const Tensor& prediction, std::size_t series,
                    std::size_t lead, std::size_t feature,
                    std::size_t out_features);

// [h_T, o_1, ..., o_{M_s}] for a fusion-free (passive) party.
std::vector<Var> MultiLevel(Binder& b, Var window, TemporalStack& temporal,
                            SpatialStack& spatial);

// Zeroes every weight and bias, for fixed-point tests.
void ZeroParameters(const ParameterList& parameters);

}  // namespace stfed

#endif  // STFED_LOCAL_MODELS_H_
