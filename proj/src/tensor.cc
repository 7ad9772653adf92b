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

#include "stfed/tensor.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace stfed {
namespace {

std::size_t Product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

void ValidateShape(const Shape& shape) {
  if (shape.size() < 2 || shape.size() > 3) {
    throw ShapeError("tensor rank must be 2 or 3, got shape " +
                     ShapeToString(shape));
  }
  for (std::size_t d : shape) {
    if (d == 0) {
      throw ShapeError("tensor dimensions must be positive, got shape " +
                       ShapeToString(shape));
    }
  }
}

}  // namespace

std::string ShapeToString(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  ValidateShape(shape_);
  if (Product(shape_) != values_.size()) {
    throw ShapeError("tensor of shape " + ShapeToString(shape_) + " needs " +
                     std::to_string(Product(shape_)) + " values, got " +
                     std::to_string(values_.size()));
  }
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  ValidateShape(shape_);
  values_.assign(Product(shape_), fill);
}

Tensor Tensor::Identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::FromRows(
    std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged rows in Tensor::FromRows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

Tensor Tensor::BatchSlice(std::size_t b) const {
  if (rank() != 3 || b >= shape_[0]) {
    throw ShapeError("BatchSlice(" + std::to_string(b) + ") on shape " +
                     ShapeToString(shape_));
  }
  const std::size_t n = rows() * cols();
  return Tensor({rows(), cols()},
                std::vector<double>(values_.begin() + b * n,
                                    values_.begin() + (b + 1) * n));
}

Tensor Tensor::Stack(std::span<const Tensor> slices) {
  if (slices.empty()) throw ShapeError("Stack of zero tensors");
  const Shape& first = slices.front().shape();
  if (first.size() != 2) throw ShapeError("Stack expects rank-2 slices");
  std::vector<double> values;
  values.reserve(slices.size() * slices.front().size());
  for (const Tensor& s : slices) {
    if (s.shape() != first) {
      throw ShapeError("Stack of mismatched shapes " + ShapeToString(first) +
                       " and " + ShapeToString(s.shape()));
    }
    values.insert(values.end(), s.values().begin(), s.values().end());
  }
  return Tensor({slices.size(), first[0], first[1]}, std::move(values));
}

double Tensor::Sum() const {
  return std::accumulate(values_.begin(), values_.end(), 0.0);
}

double Tensor::MaxAbs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

bool Tensor::AllFinite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace stfed
