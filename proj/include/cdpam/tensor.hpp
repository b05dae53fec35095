// Copyright 2026 The CDPAM Authors. All Rights Reserved.
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

#pragma once

#include <Eigen/Core>
#include <initializer_list>
#include <string>
#include <vector>

#include "cdpam/error.hpp"

namespace cdpam {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense n-d array of doubles, row-major.
class Tensor {
 public:
  using MatrixMap = Eigen::Map<RowMatrixXd>;
  using ConstMatrixMap = Eigen::Map<const RowMatrixXd>;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Eigen::VectorXd values);
  Tensor(Shape shape, std::initializer_list<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  Index dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  Index size() const { return values_.size(); }
  bool empty() const { return values_.size() == 0; }

  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double& operator[](Index i) { return values_[i]; }
  double operator[](Index i) const { return values_[i]; }

  // Scalar value of a one-element tensor.
  double item() const;

  // Row-major view with the first `rows` as rows and the rest flattened.
  MatrixMap matrix(Index rows);
  ConstMatrixMap matrix(Index rows) const;

  Tensor reshaped(Shape shape) const;
  void set_zero() { values_.setZero(); }
  bool all_finite() const { return values_.allFinite(); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Shape shape_;
  Eigen::VectorXd values_;
};

void require_shape(const Tensor& t, const Shape& shape, const char* what);

}  // namespace cdpam
