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

#ifndef STFED_TENSOR_H_
#define STFED_TENSOR_H_

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stfed {

// Every error raised by the library derives from this type so the CLI can
// render a structured report without catching unrelated exceptions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::string ShapeToString(const Shape& shape);

// Dense row-major array of doubles. Rank is 2 (rows, cols) or 3
// (batch, rows, cols); a scalar is the 1x1 matrix.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);
  explicit Tensor(Shape shape, double fill = 0.0);

  static Tensor Zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor Ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor Scalar(double v) { return Tensor({1, 1}, v); }
  static Tensor Identity(std::size_t n);
  // Rank-2 literal, e.g. Tensor::FromRows({{1, 2}, {3, 4}}).
  static Tensor FromRows(
      std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  // Rank-2 tensors report batch() == 1.
  std::size_t batch() const { return rank() == 3 ? shape_[0] : 1; }
  std::size_t rows() const { return shape_[rank() - 2]; }
  std::size_t cols() const { return shape_[rank() - 1]; }

  std::span<const double> values() const { return values_; }
  std::span<double> mutable_values() { return values_; }
  std::vector<double>& storage() { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const {
    return values_[r * cols() + c];
  }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t b, std::size_t r, std::size_t c) const {
    return values_[(b * rows() + r) * cols() + c];
  }
  double& at(std::size_t b, std::size_t r, std::size_t c) {
    return values_[(b * rows() + r) * cols() + c];
  }

  // Copies batch slice `b` of a rank-3 tensor into a rank-2 tensor.
  Tensor BatchSlice(std::size_t b) const;
  // Stacks equally shaped rank-2 tensors into a rank-3 tensor.
  static Tensor Stack(std::span<const Tensor> slices);

  double Sum() const;
  double MaxAbs() const;
  bool AllFinite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

}  // namespace stfed

#endif  // STFED_TENSOR_H_
