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

#include "stfed/local_models.h"

#include <algorithm>
#include <cmath>

namespace stfed {

Var Binder::operator()(Parameter& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return it->second;
  Var v = frozen_ ? tape_->Leaf(p.value, LeafKind::kParameter, false, p.name)
                  : tape_->Param(p);
  bound_.emplace(&p, v);
  return v;
}

// ---------------------------------------------------------------------------

LinearLayer::LinearLayer(const std::string& name, std::size_t in,
                         std::size_t out, bool bias, std::mt19937_64& rng)
    : weight(name + "/weight", ScaledUniform(in, out, rng)),
      has_bias(bias) {
  if (bias) this->bias = Parameter(name + "/bias", Tensor::Zeros({1, out}));
}

Var LinearLayer::Forward(Binder& b, Var x) {
  Var y = MatMul(x, b(weight));
  return has_bias ? AddBias(y, b(bias)) : y;
}

void LinearLayer::AppendParameters(ParameterList& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

// ---------------------------------------------------------------------------

GruCell::GruCell(const std::string& name, std::size_t in, std::size_t hidden,
                 std::mt19937_64& rng)
    : input(name + "/input", in, 3 * hidden, true, rng),
      recurrent(name + "/recurrent", hidden, 3 * hidden, true, rng),
      hidden_(hidden) {}

Var GruCell::Forward(Binder& b, Var x, Var h) {
  const std::size_t n = hidden_;
  Var gx = input.Forward(b, x);
  Var gh = recurrent.Forward(b, h);
  Var z = Sigmoid(Add(SliceCols(gx, 0, n), SliceCols(gh, 0, n)));
  Var r = Sigmoid(Add(SliceCols(gx, n, 2 * n), SliceCols(gh, n, 2 * n)));
  Var cand =
      Tanh(Add(SliceCols(gx, 2 * n, 3 * n), Mul(r, SliceCols(gh, 2 * n, 3 * n))));
  return Add(Mul(Affine(z, -1.0, 1.0), cand), Mul(z, h));
}

void GruCell::AppendParameters(ParameterList& out) {
  input.AppendParameters(out);
  recurrent.AppendParameters(out);
}

// ---------------------------------------------------------------------------

TemporalStack::TemporalStack(const std::string& name, std::size_t features,
                             std::size_t history, std::size_t hidden,
                             std::size_t layers, std::mt19937_64& rng)
    : embedding(name + "/embedding", features, hidden, true, rng),
      features_(features),
      history_(history),
      hidden_(hidden) {
  if (features == 0 || history == 0 || hidden == 0 || layers == 0) {
    throw ShapeError("temporal stack needs positive features, history, "
                     "hidden width and layer count");
  }
  for (std::size_t m = 0; m < layers; ++m) {
    cells.emplace_back(name + "/gru" + std::to_string(m), hidden, hidden, rng);
  }
}

Var TemporalStack::Forward(Binder& b, Var window) {
  const Tensor& w = window.value();
  if (w.cols() != history_ * features_) {
    throw ShapeError("temporal stack expects " + std::to_string(history_) +
                     " steps x " + std::to_string(features_) +
                     " features per series, got window " +
                     ShapeToString(w.shape()));
  }
  Shape state_shape = w.shape();
  state_shape.back() = hidden_;
  std::vector<Var> h(cells.size());
  for (Var& v : h) v = b.tape().Constant(Tensor::Zeros(state_shape));
  for (std::size_t t = 0; t < history_; ++t) {
    Var x = embedding.Forward(
        b, SliceCols(window, t * features_, (t + 1) * features_));
    for (std::size_t m = 0; m < cells.size(); ++m) {
      h[m] = cells[m].Forward(b, x, h[m]);
      x = h[m];
    }
  }
  return h.back();
}

void TemporalStack::AppendParameters(ParameterList& out) {
  embedding.AppendParameters(out);
  for (GruCell& c : cells) c.AppendParameters(out);
}

// ---------------------------------------------------------------------------

Tensor BuildAdjacency(std::span<const Point> coordinates, double threshold) {
  const std::size_t n = coordinates.size();
  if (n == 0) throw ShapeError("adjacency needs at least one node");
  Tensor dist({n, n});
  std::vector<double> off_diagonal;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      dist.at(i, j) = std::hypot(coordinates[i].x - coordinates[j].x,
                                 coordinates[i].y - coordinates[j].y);
      if (i < j) off_diagonal.push_back(dist.at(i, j));
    }
  }
  double bandwidth = 1.0;
  if (!off_diagonal.empty()) {
    const std::size_t mid = off_diagonal.size() / 2;
    std::nth_element(off_diagonal.begin(), off_diagonal.begin() + mid,
                     off_diagonal.end());
    bandwidth = off_diagonal[mid];
    if (off_diagonal.size() % 2 == 0) {
      const double lower = *std::max_element(off_diagonal.begin(),
                                             off_diagonal.begin() + mid);
      bandwidth = 0.5 * (bandwidth + lower);
    }
    if (!(bandwidth > 0.0)) bandwidth = 1.0;
  }
  Tensor a({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double r = dist.at(i, j) / bandwidth;
      const double w = std::exp(-r * r);
      a.at(i, j) = (i == j || w >= threshold) ? w : 0.0;
      row += a.at(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) a.at(i, j) /= row;
  }
  return a;
}

SpatialLayer::SpatialLayer(const std::string& name, std::size_t hidden,
                           Activation activation, std::mt19937_64& rng)
    : w_self(name + "/w_self", ScaledUniform(hidden, hidden, rng)),
      w_skip(name + "/w_skip", ScaledUniform(hidden, hidden, rng)),
      activation(activation) {}

Var SpatialLayer::Forward(Binder& b, Var adjacency, Var h) {
  if (adjacency.value().rows() != h.value().rows()) {
    throw ShapeError("spatial layer: adjacency " +
                     ShapeToString(adjacency.shape()) +
                     " does not match representation " +
                     ShapeToString(h.shape()));
  }
  Var pre = Add(MatMul(MatMul(adjacency, h), b(w_self)), MatMul(h, b(w_skip)));
  return activation == Activation::kRelu ? Relu(pre) : pre;
}

void SpatialLayer::AppendParameters(ParameterList& out) {
  out.push_back(&w_self);
  out.push_back(&w_skip);
}

SpatialStack::SpatialStack(const std::string& name, Tensor adjacency,
                           std::size_t hidden, std::size_t layers,
                           Activation activation, std::mt19937_64& rng)
    : adjacency(std::move(adjacency)) {
  if (layers == 0) throw ShapeError("spatial stack needs at least one layer");
  for (std::size_t m = 0; m < layers; ++m) {
    this->layers.emplace_back(name + "/layer" + std::to_string(m + 1), hidden,
                              activation, rng);
  }
}

Var SpatialStack::Layer(Binder& b, std::size_t m, Var h) {
  return layers.at(m).Forward(b, b.tape().Constant(adjacency), h);
}

void SpatialStack::AppendParameters(ParameterList& out) {
  for (SpatialLayer& l : layers) l.AppendParameters(out);
}

// ---------------------------------------------------------------------------

PredictionHead::PredictionHead(const std::string& name, std::size_t hidden,
                               std::size_t inner, std::size_t horizon,
                               std::size_t out_features, std::mt19937_64& rng)
    : first(name + "/fc1", hidden, inner, true, rng),
      second(name + "/fc2", inner, horizon * out_features, true, rng),
      horizon_(horizon),
      out_features_(out_features) {}

Var PredictionHead::Forward(Binder& b, Var h) {
  return second.Forward(b, Relu(first.Forward(b, h)));
}

void PredictionHead::AppendParameters(ParameterList& out) {
  first.AppendParameters(out);
  second.AppendParameters(out);
}

double PredictionAt(const Tensor& prediction, std::size_t series,
                    std::size_t lead, std::size_t feature,
                    std::size_t out_features) {
  return prediction.at(series, lead * out_features + feature);
}

std::vector<Var> MultiLevel(Binder& b, Var window, TemporalStack& temporal,
                            SpatialStack& spatial) {
  std::vector<Var> levels;
  levels.push_back(temporal.Forward(b, window));
  for (std::size_t m = 0; m < spatial.size(); ++m) {
    levels.push_back(spatial.Layer(b, m, levels.back()));
  }
  return levels;
}

void ZeroParameters(const ParameterList& parameters) {
  for (Parameter* p : parameters) {
    std::fill(p->value.mutable_values().begin(),
              p->value.mutable_values().end(), 0.0);
  }
}

}  // namespace stfed
