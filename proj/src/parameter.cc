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

#include "stfed/parameter.h"

#include <cmath>

namespace stfed {

Parameter::Parameter(std::string name, Tensor value)
    : name(std::move(name)),
      value(std::move(value)),
      grad(Tensor::Zeros(this->value.shape())),
      first_moment(Tensor::Zeros(this->value.shape())),
      second_moment(Tensor::Zeros(this->value.shape())) {}

void Parameter::ZeroGrad() {
  for (double& g : grad.mutable_values()) g = 0.0;
}

Tensor ScaledUniform(std::size_t fan_in, std::size_t fan_out,
                     std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t({fan_in, fan_out});
  for (double& v : t.mutable_values()) v = dist(rng);
  return t;
}

void Adam::Step(const ParameterList& parameters) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bias1 = 1.0 - std::pow(options_.beta1, t);
  const double bias2 = 1.0 - std::pow(options_.beta2, t);
  for (Parameter* p : parameters) {
    auto value = p->value.mutable_values();
    auto grad = p->grad.mutable_values();
    auto m = p->first_moment.mutable_values();
    auto v = p->second_moment.mutable_values();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i] + options_.weight_decay * value[i];
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g;
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      value[i] -= options_.learning_rate * m_hat /
                  (std::sqrt(v_hat) + options_.epsilon);
      grad[i] = 0.0;
    }
  }
}

void ZeroGrads(const ParameterList& parameters) {
  for (Parameter* p : parameters) p->ZeroGrad();
}

}  // namespace stfed
