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

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cdpam/tensor.hpp"

namespace cdpam {

// A learnable tensor (or a non-trainable buffer such as running statistics)
// with its gradient accumulator.
struct Parameter {
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad() { grad = Tensor::zeros(value.shape()); }
};

// Named parameters in lexicographic order. References stay valid across
// insertions.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Tensor init, bool trainable = true);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  // Trainable parameters whose name starts with `prefix`.
  std::vector<Parameter*> trainable(const std::string& prefix = "");

 private:
  std::map<std::string, Parameter> params_;
};

class Graph;

// Handle to a node of a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  const Tensor& grad() const;

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

struct GradContext {
  const Tensor& output;
  const Tensor& output_grad;
  std::vector<const Tensor*> inputs;
  std::vector<Tensor*> input_grads;  // null where the input needs no gradient
};

using BackwardFn = std::function<void(GradContext&)>;

// Append-only tape of operations. Node inputs always precede the node, so a
// reverse sweep is a valid topological order.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t);
  // Leaf bound to p; backward() adds its gradient into p.grad when trainable.
  Var param(Parameter& p);
  // Appends an op node; raises NumericError on non-finite output.
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id())).value; }
  // Gradient of the last backward() root w.r.t. v (zeros when unreached).
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id())).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // root must be a one-element tensor.
  void backward(Var root);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  Tensor empty_grad_;
};

// ---- recorded operations ----

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

Var sum(Var a);
Var mean(Var a);
Var abs(Var a);
Var sigmoid(Var a);
Var leaky_relu(Var a, double slope = 0.2);
Var reshape(Var a, Shape shape);

// Rank-2 helpers. x: [rows, cols].
Var slice_cols(Var x, Index begin, Index count);
Var row_mean(Var x);                  // -> [rows]
Var concat_rows(Var a, Var b);        // [n, d] + [m, d] -> [n + m, d]

Var linear(Var x, Var w, std::optional<Var> b = std::nullopt);
Var conv1d(Var x, Var w, std::optional<Var> bias, int stride, Index padding);
Var global_avg_pool(Var x);

// Training mode uses batch statistics and updates the running buffers with
// the given momentum (running = (1 - m) running + m batch, unbiased variance).
// Inference mode normalises with the running buffers.
Var batch_norm1d(Var x, Var gamma, Var beta, Parameter& running_mean, Parameter& running_var,
                 bool training, double momentum = 0.1, double eps = 1e-5);

// a, b: one-dimensional, same length, both non-zero. -> scalar
Var cosine_similarity(Var a, Var b);

}  // namespace cdpam
