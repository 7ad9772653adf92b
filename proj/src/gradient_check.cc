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

#include "stfed/gradient_check.h"

#include <algorithm>
#include <cmath>

namespace stfed {
namespace {

double Evaluate(const GraphBuilder& graph, const std::vector<Tensor>& point) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(point.size());
  for (const Tensor& t : point) leaves.push_back(tape.Input(t));
  Var out = graph(tape, leaves);
  if (out.value().size() != 1) {
    throw Error("GradientCheck: graph must return a scalar, got shape " +
                ShapeToString(out.shape()));
  }
  return out.value()[0];
}

std::string Where(const Coordinate& c) {
  return "input " + std::to_string(c.input) + " index " +
         std::to_string(c.index);
}

}  // namespace

double RelativeError(double analytic, double numeric, double floor) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

double CentralDifference(const std::function<double()>& f, double& coordinate,
                         double step) {
  const double saved = coordinate;
  coordinate = saved + step;
  const double up = f();
  coordinate = saved - step;
  const double down = f();
  coordinate = saved;
  return (up - down) / (2.0 * step);
}

GradientCheckResult GradientCheck(const GraphBuilder& graph,
                                  const std::vector<Tensor>& point,
                                  const GradientCheckOptions& options) {
  if (!(options.step >= 1e-6 && options.step <= 1e-2)) {
    throw Error("GradientCheck: step must lie in [1e-6, 1e-2], got " +
                std::to_string(options.step));
  }
  GradientCheckResult result;

  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : point) leaves.push_back(tape.Input(t, true));
  Var out = graph(tape, leaves);
  if (out.value().size() != 1) {
    throw Error("GradientCheck: graph must return a scalar, got shape " +
                ShapeToString(out.shape()));
  }
  if (!out.value().AllFinite()) {
    result.failure = "non-finite graph value at the base point";
    return result;
  }
  const auto grads = tape.Backward(out);
  const double f0 = out.value()[0];

  std::vector<Tensor> probe = point;
  const double h = options.step;
  for (std::size_t input = 0; input < point.size(); ++input) {
    const Tensor& analytic = grads.at(leaves[input].id());
    for (std::size_t i = 0; i < point[input].size(); ++i) {
      const Coordinate where{input, i};
      const double x = point[input][i];
      probe[input][i] = x + h;
      const double up = Evaluate(graph, probe);
      probe[input][i] = x - h;
      const double down = Evaluate(graph, probe);
      probe[input][i] = x;
      if (!std::isfinite(up) || !std::isfinite(down) ||
          !std::isfinite(analytic[i])) {
        result.failure = "non-finite value at " + Where(where);
        result.passed = false;
        return result;
      }
      const double forward = (up - f0) / h;
      const double backward = (f0 - down) / h;
      const double scale =
          std::max({1.0, std::abs(forward), std::abs(backward)});
      if (std::abs(forward - backward) > options.kink_tolerance * scale) {
        result.excluded.push_back(where);
        continue;
      }
      const double numeric = (up - down) / (2.0 * h);
      const double err =
          RelativeError(analytic[i], numeric, options.denominator_floor);
      ++result.checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst = where;
      }
    }
  }
  result.passed = result.max_relative_error <= options.tolerance;
  if (!result.passed) {
    result.failure = "relative error " +
                     std::to_string(result.max_relative_error) + " at " +
                     Where(result.worst);
  }
  return result;
}

}  // namespace stfed
