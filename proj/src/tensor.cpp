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

#include "cdpam/tensor.hpp"

#include <sstream>

namespace cdpam {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("tensor: non-positive extent in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  values_ = Eigen::VectorXd::Zero(shape_size(shape_));
}

Tensor::Tensor(Shape shape, Eigen::VectorXd values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size())
    throw ShapeError("tensor: " + std::to_string(values_.size()) + " values for shape " +
                     shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values) : shape_(std::move(shape)) {
  values_.resize(static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) values_[i++] = v;
  if (shape_size(shape_) != values_.size())
    throw ShapeError("tensor: " + std::to_string(values_.size()) + " values for shape " +
                     shape_string(shape_));
}

Tensor Tensor::constant(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.values_.setConstant(v);
  return t;
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("tensor: item() on shape " + shape_string(shape_));
  return values_[0];
}

Tensor::MatrixMap Tensor::matrix(Index rows) {
  return MatrixMap(values_.data(), rows, values_.size() / rows);
}

Tensor::ConstMatrixMap Tensor::matrix(Index rows) const {
  return ConstMatrixMap(values_.data(), rows, values_.size() / rows);
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

void require_shape(const Tensor& t, const Shape& shape, const char* what) {
  if (t.shape() != shape)
    throw ShapeError(std::string(what) + ": expected shape " + shape_string(shape) + ", got " +
                     shape_string(t.shape()));
}

}  // namespace cdpam
