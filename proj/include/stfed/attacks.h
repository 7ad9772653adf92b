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

// Reconstruction attacks on published virtual nodes, the leakage score, and
// an empirical check of the noise-induced lower bound on reconstruction
// error for linear models.
//
// Samples are (K, N^P, T * F) tensors in the scaled space; the distance of
// a sample is the L2 norm over all of its values.

#ifndef STFED_ATTACKS_H_
#define STFED_ATTACKS_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stfed/local_models.h"
#include "stfed/parameter.h"
#include "stfed/protocol.h"
#include "stfed/tape.h"

namespace stfed {

class AttackError : public Error {
 public:
  using Error::Error;
};

std::vector<double> SampleDistances(const Tensor& truth,
                                    const Tensor& reconstruction);

// 1 / (1 + mean sample distance).
double InfoLeak(const Tensor& truth, const Tensor& reconstruction);

struct AttackReport {
  std::string method;
  Tensor reconstruction;
  std::vector<double> distances;
  double infoleak = 0.0;
  double scaled_mae = 0.0;
  std::size_t restarts = 0;
  std::string note;

  nlohmann::json ToJson(bool include_reconstruction = false) const;
};

AttackReport MakeReport(std::string method, const Tensor& truth,
                        Tensor reconstruction);

// Differentiable map from an attack input (K, N^P, T * F) to the
// representation the attacker compares with its targets.
using RepresentationMap = std::function<Var(Binder& frozen, Var x)>;

// Clipped virtual nodes of the first `levels` levels, concatenated along
// columns; parameters enter as constants.
RepresentationMap ClippedNodeMap(PassiveModel& model, double clip,
                                 std::size_t levels = 1);

// sum_i (|x_{i+1} - x_i|^2)^(beta/2) along time, per series and feature.
Var TotalVariation(Var x, std::size_t features, double beta);

struct WhiteboxOptions {
  double lambda = 1e-4;
  double beta = 2.0;
  std::size_t steps = 500;
  double learning_rate = 0.1;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;  // restart initialization
};

// argmin_x ||targets - f(x)||^2 + lambda * TV(x), from zero. A non-finite
// objective triggers one restart from a small random point; a second one
// throws AttackError.
AttackReport WhiteboxAttack(const Tensor& targets, const Tensor& truth,
                            const RepresentationMap& f, std::size_t features,
                            const WhiteboxOptions& options);

struct ShadowData {
  Tensor passive;  // (S, N^P, T_P * F^P)
  Tensor active;   // (S, N^A, T_A * F^A)
  Tensor labels;   // (S, N^A, horizon * F_out)
  std::size_t size() const { return passive.empty() ? 0 : passive.batch(); }
};

// Every window of `windows` for passive party `party`.
ShadowData ShadowFromWindows(const AlignedWindows& windows, std::size_t party);
ShadowData ConcatShadow(const ShadowData& a, const ShadowData& b);

struct QueryFreeOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  AdamOptions adam;
  std::uint64_t seed = 0;
  WhiteboxOptions whitebox;
};

// Trains a surrogate passive model (same architecture, fresh weights)
// through the frozen active model on `shadow`, then runs the white-box
// attack against the surrogate. `party` selects the active model's gate
// slot the surrogate feeds; other slots receive zeros.
AttackReport QueryFreeAttack(const Tensor& targets, const Tensor& truth,
                             const ShadowData& shadow, ActiveModel& active,
                             std::size_t party, const PartyShape& shape,
                             const std::vector<Point>& active_coordinates,
                             const ModelConfig& config, double clip,
                             const QueryFreeOptions& options);

enum class GuessDistribution { kNormal, kUniform };

// All-zero reconstruction (the per-feature mean in scaled space).
AttackReport MeanAttack(const Tensor& truth);
// I.i.d. draws with zero mean and unit variance: standard normal, or
// uniform on [-sqrt(3), sqrt(3)].
AttackReport RandomGuessAttack(const Tensor& truth,
                               GuessDistribution distribution,
                               std::uint64_t seed);

// Indices of the samples nearest to `clusters` k-means centroids
// (k-means++ seeding), sorted and distinct. At most samples.batch() are
// returned.
std::vector<std::size_t> SelectRepresentatives(const Tensor& samples,
                                               std::size_t clusters,
                                               std::uint64_t seed,
                                               std::size_t iterations = 50);

// ---------------------------------------------------------------------------
// Bound check for a linear model y = W x.

struct BoundTrial {
  double lipschitz = 0.0;   // largest singular value of W
  double noise_norm = 0.0;
  double deviation = 0.0;   // ||x - x*||
  double bound = 0.0;       // ||noise|| / L
  bool consistent = true;   // W x* reproduces W x + noise
  bool satisfied = false;
};

// x* is the minimum-norm least-squares pre-image of W x + noise.
BoundTrial EvaluateBound(const Tensor& w, std::span<const double> x,
                         std::span<const double> noise);

struct BoundCheckResult {
  std::size_t trials = 0;
  std::size_t passed = 0;
  std::size_t skipped = 0;
  double pass_rate = 0.0;
  // Smallest deviation / bound over evaluated trials.
  double min_ratio = 0.0;
};

// Random square full-rank W of size in [min_dim, max_dim], x ~ N(0, 1),
// noise ~ N(0, (sigma * C)^2) per coordinate.
BoundCheckResult BoundCheck(std::size_t trials, const DpConfig& dp,
                            std::uint64_t seed, std::size_t min_dim = 2,
                            std::size_t max_dim = 8);

}  // namespace stfed

#endif  // STFED_ATTACKS_H_
