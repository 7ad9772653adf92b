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

#ifndef STFED_PARAMETER_H_
#define STFED_PARAMETER_H_

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stfed/tensor.h"

namespace stfed {

// A trainable array with its gradient accumulator and Adam moments.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  void ZeroGrad();

  std::string name;
  Tensor value;
  Tensor grad;
  Tensor first_moment;
  Tensor second_moment;
};

using ParameterList = std::vector<Parameter*>;

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor ScaledUniform(std::size_t fan_in, std::size_t fan_out,
                     std::mt19937_64& rng);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Coupled L2 penalty: weight_decay * value is added to the gradient.
  double weight_decay = 1e-4;
};

class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  // Updates every parameter from its accumulated gradient, then zeroes it.
  void Step(const ParameterList& parameters);

  const AdamOptions& options() const { return options_; }
  std::int64_t steps() const { return steps_; }

 private:
  AdamOptions options_;
  std::int64_t steps_ = 0;
};

void ZeroGrads(const ParameterList& parameters);

}  // namespace stfed

#endif  // STFED_PARAMETER_H_
