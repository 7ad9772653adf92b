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

#include "stfed/attacks.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "stfed/random.h"

namespace stfed {

std::vector<double> SampleDistances(const Tensor& truth,
                                    const Tensor& reconstruction) {
  if (truth.shape() != reconstruction.shape()) {
    throw ShapeError("attack: reconstruction " +
                     ShapeToString(reconstruction.shape()) +
                     " does not match truth " + ShapeToString(truth.shape()));
  }
  const std::size_t samples = truth.batch();
  const std::size_t per = truth.size() / samples;
  std::vector<double> out(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    double acc = 0.0;
    for (std::size_t i = s * per; i < (s + 1) * per; ++i) {
      const double d = truth[i] - reconstruction[i];
      acc += d * d;
    }
    out[s] = std::sqrt(acc);
  }
  return out;
}

double InfoLeak(const Tensor& truth, const Tensor& reconstruction) {
  const auto d = SampleDistances(truth, reconstruction);
  const double mean =
      std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  return 1.0 / (1.0 + mean);
}

nlohmann::json AttackReport::ToJson(bool include_reconstruction) const {
  nlohmann::json j = {{"method", method},
                      {"infoleak", infoleak},
                      {"scaled_mae", scaled_mae},
                      {"distances", distances},
                      {"restarts", restarts}};
  if (!note.empty()) j["note"] = note;
  if (include_reconstruction) {
    j["reconstruction_shape"] = reconstruction.shape();
    j["reconstruction"] = std::vector<double>(reconstruction.values().begin(),
                                              reconstruction.values().end());
  }
  return j;
}

AttackReport MakeReport(std::string method, const Tensor& truth,
                        Tensor reconstruction) {
  AttackReport r;
  r.method = std::move(method);
  r.distances = SampleDistances(truth, reconstruction);
  const double mean = std::accumulate(r.distances.begin(), r.distances.end(),
                                      0.0) /
                      static_cast<double>(r.distances.size());
  r.infoleak = 1.0 / (1.0 + mean);
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    abs_sum += std::abs(truth[i] - reconstruction[i]);
  }
  r.scaled_mae = abs_sum / static_cast<double>(truth.size());
  r.reconstruction = std::move(reconstruction);
  return r;
}

RepresentationMap ClippedNodeMap(PassiveModel& model, double clip,
                                 std::size_t levels) {
  return [&model, clip, levels](Binder& b, Var x) {
    std::vector<Var> parts;
    for (Var v : model.VirtualNodes(b, x, levels)) {
      parts.push_back(RowScale(v, ClipFactor(L2NormRows(v), clip)));
    }
    return parts.size() == 1 ? parts.front() : ConcatCols(parts);
  };
}

Var TotalVariation(Var x, std::size_t features, double beta) {
  const std::size_t cols = x.value().cols();
  if (features == 0 || cols % features != 0) {
    throw ShapeError("total variation: " + std::to_string(cols) +
                     " columns are not a whole number of steps of " +
                     std::to_string(features) + " features");
  }
  if (cols == features) return Scale(Sum(x), 0.0);
  Var d = Sub(SliceCols(x, features, cols), SliceCols(x, 0, cols - features));
  Var sq = Mul(d, d);
  return beta == 2.0 ? Sum(sq) : Sum(Pow(sq, beta / 2.0));
}

namespace {

bool RunWhitebox(const Tensor& targets, const RepresentationMap& f,
                 std::size_t features, const WhiteboxOptions& o,
                 Parameter& x) {
  Adam adam({o.learning_rate, 0.9, 0.999, 1e-8, o.weight_decay});
  const ParameterList params = {&x};
  for (std::size_t step = 0; step < o.steps; ++step) {
    Tape tape;
    Binder frozen(tape, true);
    Var xv = tape.Param(x);
    Var diff = Sub(f(frozen, xv), tape.Constant(targets));
    Var objective = Sum(Mul(diff, diff));
    if (o.lambda != 0.0) {
      objective =
          Add(objective, Scale(TotalVariation(xv, features, o.beta), o.lambda));
    }
    if (!std::isfinite(objective.value()[0])) return false;
    tape.Backward(objective);
    tape.AccumulateParameterGradients();
    adam.Step(params);
    if (!x.value.AllFinite()) return false;
  }
  return true;
}

}  // namespace

AttackReport WhiteboxAttack(const Tensor& targets, const Tensor& truth,
                            const RepresentationMap& f, std::size_t features,
                            const WhiteboxOptions& options) {
  Parameter x("attack/x", Tensor::Zeros(truth.shape()));
  std::size_t restarts = 0;
  if (!RunWhitebox(targets, f, features, options, x)) {
    ++restarts;
    auto rng = SeedStreams(options.seed).Stream("attack-restart");
    std::normal_distribution<double> normal(0.0, 0.01);
    x = Parameter("attack/x", Tensor(truth.shape()));
    for (double& v : x.value.mutable_values()) v = normal(rng);
    if (!RunWhitebox(targets, f, features, options, x)) {
      throw AttackError("white-box attack: objective became non-finite after "
                        "a restart");
    }
  }
  AttackReport r = MakeReport("whitebox", truth, x.value);
  r.restarts = restarts;
  return r;
}

// ---------------------------------------------------------------------------

ShadowData ShadowFromWindows(const AlignedWindows& windows, std::size_t party) {
  std::vector<std::size_t> idx(windows.size());
  std::iota(idx.begin(), idx.end(), 0);
  return {windows.PassiveInputs(party, idx), windows.ActiveInputs(idx),
          windows.Labels(idx)};
}

namespace {

Tensor ConcatBatch(const Tensor& a, const Tensor& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("cannot concatenate " + ShapeToString(a.shape()) +
                     " and " + ShapeToString(b.shape()));
  }
  std::vector<double> v(a.values().begin(), a.values().end());
  v.insert(v.end(), b.values().begin(), b.values().end());
  return Tensor({a.batch() + b.batch(), a.rows(), a.cols()}, std::move(v));
}

Tensor Gather(const Tensor& t, std::span<const std::size_t> idx) {
  const std::size_t per = t.rows() * t.cols();
  Tensor out({idx.size(), t.rows(), t.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(idx[i] * per),
                per,
                out.mutable_values().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

}  // namespace

ShadowData ConcatShadow(const ShadowData& a, const ShadowData& b) {
  return {ConcatBatch(a.passive, b.passive), ConcatBatch(a.active, b.active),
          ConcatBatch(a.labels, b.labels)};
}

AttackReport QueryFreeAttack(const Tensor& targets, const Tensor& truth,
                             const ShadowData& shadow, ActiveModel& active,
                             std::size_t party, const PartyShape& shape,
                             const std::vector<Point>& active_coordinates,
                             const ModelConfig& config, double clip,
                             const QueryFreeOptions& options) {
  if (party >= active.gates.size()) {
    throw AttackError("query-free attack: active model has no slot for "
                      "passive party index " + std::to_string(party));
  }
  const SeedStreams streams(options.seed);
  auto init_rng = streams.Stream("attack-surrogate");
  PassiveModel surrogate("surrogate", shape, active_coordinates, config,
                         init_rng);
  const std::size_t levels = active.gates[party].size();
  const ParameterList params = surrogate.Parameters();
  Adam adam(options.adam);
  auto order_rng = streams.Stream("attack-batches");
  std::vector<std::size_t> order(shadow.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = std::max<std::size_t>(options.batch_size, 1);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t start = 0, bi = 0; start < order.size();
         start += bs, ++bi) {
      const std::span<const std::size_t> idx(
          order.data() + start, std::min(bs, order.size() - start));
      Tape tape;
      Binder train(tape);
      Binder frozen(tape, true);
      const Tensor passive_in = Gather(shadow.passive, idx);
      std::vector<std::vector<Var>> received(active.gates.size());
      for (std::size_t p = 0; p < received.size(); ++p) {
        if (p == party) {
          for (Var v : surrogate.VirtualNodes(
                   train, tape.Input(passive_in), levels)) {
            received[p].push_back(RowScale(v, ClipFactor(L2NormRows(v), clip)));
          }
        } else {
          for (std::size_t l = 0; l < levels; ++l) {
            received[p].push_back(tape.Constant(Tensor::Zeros(
                {idx.size(), active_coordinates.size(), config.hidden})));
          }
        }
      }
      Var pred = active.Forward(frozen, tape.Input(Gather(shadow.active, idx)),
                                received);
      Var loss =
          Mean(Abs(Sub(pred, tape.Constant(Gather(shadow.labels, idx)))));
      if (!std::isfinite(loss.value()[0])) {
        throw AttackError("query-free attack: surrogate diverged at epoch " +
                          std::to_string(epoch + 1) + ", batch " +
                          std::to_string(bi));
      }
      tape.Backward(loss);
      tape.AccumulateParameterGradients();
      adam.Step(params);
    }
  }
  AttackReport r = WhiteboxAttack(targets, truth,
                                  ClippedNodeMap(surrogate, clip, 1),
                                  shape.features, options.whitebox);
  r.method = "queryfree";
  return r;
}

// ---------------------------------------------------------------------------

AttackReport MeanAttack(const Tensor& truth) {
  return MakeReport("mean", truth, Tensor::Zeros(truth.shape()));
}

AttackReport RandomGuessAttack(const Tensor& truth,
                               GuessDistribution distribution,
                               std::uint64_t seed) {
  auto rng = SeedStreams(seed).Stream("random-guess");
  Tensor guess(truth.shape());
  if (distribution == GuessDistribution::kNormal) {
    std::normal_distribution<double> d(0.0, 1.0);
    for (double& v : guess.mutable_values()) v = d(rng);
  } else {
    const double a = std::sqrt(3.0);
    std::uniform_real_distribution<double> d(-a, a);
    for (double& v : guess.mutable_values()) v = d(rng);
  }
  AttackReport r = MakeReport("random-guess", truth, std::move(guess));
  r.note = distribution == GuessDistribution::kNormal ? "normal" : "uniform";
  return r;
}

std::vector<std::size_t> SelectRepresentatives(const Tensor& samples,
                                               std::size_t clusters,
                                               std::uint64_t seed,
                                               std::size_t iterations) {
  const std::size_t n = samples.batch();
  const std::size_t dim = samples.size() / std::max<std::size_t>(n, 1);
  if (n == 0) return {};
  const std::size_t k = std::min(clusters, n);
  auto rng = SeedStreams(seed).Stream("kmeans");
  const double* data = samples.values().data();
  auto dist2 = [&](const double* a, const double* b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc;
  };

  std::vector<double> centroids;
  centroids.reserve(k * dim);
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  const std::size_t c0 = first(rng);
  centroids.insert(centroids.end(), data + c0 * dim, data + (c0 + 1) * dim);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (centroids.size() < k * dim) {
    const double* last = centroids.data() + centroids.size() - dim;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], dist2(data + i * dim, last));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      for (pick = 0; pick + 1 < n; ++pick) {
        r -= nearest[pick];
        if (r <= 0.0) break;
      }
    } else {
      pick = first(rng);
    }
    centroids.insert(centroids.end(), data + pick * dim,
                     data + (pick + 1) * dim);
  }

  std::vector<std::size_t> assign(n, 0);
  for (std::size_t it = 0; it < iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = dist2(data + i * dim, centroids.data() + c * dim);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
    }
    std::vector<double> sums(k * dim, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t d = 0; d < dim; ++d) {
        sums[assign[i] * dim + d] += data[i * dim + d];
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) {
        centroids[c * dim + d] =
            sums[c * dim + d] / static_cast<double>(counts[c]);
      }
    }
    if (!changed && it > 0) break;
  }

  std::vector<bool> used(n, false);
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      const double d = dist2(data + i * dim, centroids.data() + c * dim);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    used[best] = true;
    out.push_back(best);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

BoundTrial EvaluateBound(const Tensor& w, std::span<const double> x,
                         std::span<const double> noise) {
  const std::size_t m = w.rows(), n = w.cols();
  if (w.rank() != 2 || x.size() != n || noise.size() != m) {
    throw ShapeError("bound check: W " + ShapeToString(w.shape()) +
                     " does not match x (" + std::to_string(x.size()) +
                     ") and noise (" + std::to_string(noise.size()) + ")");
  }
  Eigen::MatrixXd W(m, n);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) W(r, c) = w.at(r, c);
  }
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), n);
  const Eigen::Map<const Eigen::VectorXd> nv(noise.data(), m);
  const Eigen::VectorXd y = W * xv + nv;
  const Eigen::VectorXd xs = W.completeOrthogonalDecomposition().solve(y);

  BoundTrial t;
  t.lipschitz = Eigen::JacobiSVD<Eigen::MatrixXd>(W).singularValues()(0);
  if (!(t.lipschitz > 0.0)) throw Error("bound check: W has no positive "
                                        "singular value");
  t.noise_norm = nv.norm();
  t.deviation = (xv - xs).norm();
  t.bound = t.noise_norm / t.lipschitz;
  t.consistent = (W * xs - y).norm() <= 1e-9 * std::max(1.0, y.norm());
  // Relative slack absorbs rounding in the equality case W = c * I.
  t.satisfied = t.consistent && t.deviation >= t.bound * (1.0 - 1e-12);
  return t;
}

BoundCheckResult BoundCheck(std::size_t trials, const DpConfig& dp,
                            std::uint64_t seed, std::size_t min_dim,
                            std::size_t max_dim) {
  dp.Validate();
  if (min_dim == 0 || max_dim < min_dim) {
    throw Error("bound check: invalid dimension range");
  }
  auto rng = SeedStreams(seed).Stream("bound-check");
  std::uniform_int_distribution<std::size_t> dim(min_dim, max_dim);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise_std = dp.NoiseStd();
  BoundCheckResult result;
  result.trials = trials;
  result.min_ratio = std::numeric_limits<double>::infinity();
  std::size_t evaluated = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = dim(rng);
    Tensor w({n, n});
    for (double& v : w.mutable_values()) v = normal(rng);
    std::vector<double> x(n), noise(n);
    for (double& v : x) v = normal(rng);
    for (double& v : noise) v = noise_std * normal(rng);
    const BoundTrial trial = EvaluateBound(w, x, noise);
    if (!trial.consistent) {
      ++result.skipped;
      continue;
    }
    ++evaluated;
    if (trial.satisfied) ++result.passed;
    if (trial.bound > 0.0) {
      result.min_ratio = std::min(result.min_ratio, trial.deviation / trial.bound);
    }
  }
  result.pass_rate = evaluated == 0 ? 0.0
                                    : static_cast<double>(result.passed) /
                                          static_cast<double>(evaluated);
  return result;
}

}  // namespace stfed
