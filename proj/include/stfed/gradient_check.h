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

#ifndef STFED_GRADIENT_CHECK_H_
#define STFED_GRADIENT_CHECK_H_

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stfed/tape.h"
#include "stfed/tensor.h"

namespace stfed {

struct GradientCheckOptions {
  // Must lie in [1e-6, 1e-2].
  double step = 1e-4;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, so exact zeros compare
  // absolutely.
  double denominator_floor = 1e-7;
  // A coordinate whose one-sided slopes differ by more than this (relative)
  // sits on a kink and is excluded from the comparison.
  double kink_tolerance = 1e-2;
};

struct Coordinate {
  std::size_t input = 0;
  std::size_t index = 0;
};

struct GradientCheckResult {
  bool passed = false;
  double max_relative_error = 0.0;
  Coordinate worst;
  std::size_t checked = 0;
  std::vector<Coordinate> excluded;
  std::string failure;
};

// Builds a scalar-valued graph from leaves bound to `inputs`.
using GraphBuilder = std::function<Var(Tape&, std::span<const Var> inputs)>;

// Compares tape gradients with central finite differences, coordinate by
// coordinate, at `point`.
GradientCheckResult GradientCheck(const GraphBuilder& graph,
                                  const std::vector<Tensor>& point,
                                  const GradientCheckOptions& options = {});

// Central difference of a black-box scalar function with respect to one
// coordinate it reads by reference. Restores the coordinate afterwards.
double CentralDifference(const std::function<double()>& f, double& coordinate,
                         double step);

double RelativeError(double analytic, double numeric, double floor);

}  // namespace stfed

#endif  // STFED_GRADIENT_CHECK_H_
