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

#include "cdpam/autograd.hpp"

#include <cmath>

#include "cdpam/kernels.hpp"

namespace cdpam {

// ---- ParameterSet ----

Parameter& ParameterSet::add(const std::string& name, Tensor init, bool trainable) {
  auto [it, inserted] = params_.try_emplace(name);
  if (!inserted) throw ContractError("parameter set: duplicate name " + name);
  it->second.value = std::move(init);
  it->second.trainable = trainable;
  return it->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("parameter set: no parameter " + name);
  return it->second;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("parameter set: no parameter " + name);
  return it->second;
}

void ParameterSet::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

std::vector<Parameter*> ParameterSet::trainable(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& [name, p] : params_)
    if (p.trainable && name.compare(0, prefix.size(), prefix) == 0) out.push_back(&p);
  return out;
}

// ---- Graph ----

const Tensor& Var::value() const { return graph_->value(*this); }
const Tensor& Var::grad() const { return graph_->grad(*this); }

Var Graph::constant(Tensor t) {
  if (!t.all_finite()) throw NumericError("graph: non-finite constant");
  Node n;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = p.trainable;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite output from ") + op);
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (&v.graph() != this) throw ContractError(std::string(op) + ": input from another graph");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(v.id())].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id()));
  return n.grad.empty() ? empty_grad_ : n.grad;
}

void Graph::backward(Var root) {
  Node& r = nodes_.at(static_cast<std::size_t>(root.id()));
  if (r.value.size() != 1)
    throw ContractError("backward: root must be scalar, got shape " + shape_string(r.value.shape()));
  for (Node& n : nodes_) n.grad = Tensor();
  r.grad = Tensor::constant(r.value.shape(), 1.0);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    GradContext ctx{n.value, n.grad, {}, {}};
    for (int in : n.inputs) {
      Node& src = nodes_[static_cast<std::size_t>(in)];
      ctx.inputs.push_back(&src.value);
      if (src.requires_grad) {
        if (src.grad.empty()) src.grad = Tensor::zeros(src.value.shape());
        ctx.input_grads.push_back(&src.grad);
      } else {
        ctx.input_grads.push_back(nullptr);
      }
    }
    n.backward(ctx);
  }
  for (Node& n : nodes_)
    if (n.param && n.param->trainable && !n.grad.empty()) {
      if (n.param->grad.empty()) n.param->zero_grad();
      n.param->grad.values() += n.grad.values();
    }
}

// ---- ops ----

namespace {

void same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

Tensor like(const Tensor& t, Eigen::VectorXd v) { return Tensor(t.shape(), std::move(v)); }

}  // namespace

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  return a.graph().record("add", like(a.value(), a.value().values() + b.value().values()), {a, b},
                          [](GradContext& c) {
                            for (Tensor* g : c.input_grads)
                              if (g) g->values() += c.output_grad.values();
                          });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  return a.graph().record("sub", like(a.value(), a.value().values() - b.value().values()), {a, b},
                          [](GradContext& c) {
                            if (c.input_grads[0]) c.input_grads[0]->values() += c.output_grad.values();
                            if (c.input_grads[1]) c.input_grads[1]->values() -= c.output_grad.values();
                          });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  return a.graph().record(
      "mul", like(a.value(), a.value().values().cwiseProduct(b.value().values())), {a, b},
      [](GradContext& c) {
        if (c.input_grads[0])
          c.input_grads[0]->values() += c.output_grad.values().cwiseProduct(c.inputs[1]->values());
        if (c.input_grads[1])
          c.input_grads[1]->values() += c.output_grad.values().cwiseProduct(c.inputs[0]->values());
      });
}

Var scale(Var a, double s) {
  return a.graph().record("scale", like(a.value(), a.value().values() * s), {a}, [s](GradContext& c) {
    c.input_grads[0]->values() += s * c.output_grad.values();
  });
}

Var add_scalar(Var a, double s) {
  return a.graph().record("add_scalar", like(a.value(), a.value().values().array() + s), {a},
                          [](GradContext& c) { c.input_grads[0]->values() += c.output_grad.values(); });
}

Var sum(Var a) {
  return a.graph().record("sum", Tensor::scalar(a.value().values().sum()), {a}, [](GradContext& c) {
    c.input_grads[0]->values().array() += c.output_grad[0];
  });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  return a.graph().record("mean", Tensor::scalar(a.value().values().sum() / n), {a},
                          [n](GradContext& c) { c.input_grads[0]->values().array() += c.output_grad[0] / n; });
}

Var abs(Var a) {
  // Subgradient 0 at 0.
  return a.graph().record("abs", like(a.value(), a.value().values().cwiseAbs()), {a}, [](GradContext& c) {
    const auto& x = c.inputs[0]->values();
    c.input_grads[0]->values() +=
        c.output_grad.values().cwiseProduct(x.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }));
  });
}

Var sigmoid(Var a) {
  Eigen::VectorXd y = a.value().values().unaryExpr([](double v) {
    return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  });
  return a.graph().record("sigmoid", like(a.value(), std::move(y)), {a}, [](GradContext& c) {
    const auto& y = c.output.values();
    c.input_grads[0]->values().array() +=
        c.output_grad.values().array() * y.array() * (1.0 - y.array());
  });
}

Var leaky_relu(Var a, double slope) {
  return a.graph().record("leaky_relu", kernels::leaky_relu(a.value(), slope), {a}, [slope](GradContext& c) {
    const auto& x = c.inputs[0]->values();
    c.input_grads[0]->values() +=
        c.output_grad.values().cwiseProduct(x.unaryExpr([slope](double v) { return v > 0 ? 1.0 : slope; }));
  });
}

Var reshape(Var a, Shape shape) {
  return a.graph().record("reshape", a.value().reshaped(std::move(shape)), {a},
                          [](GradContext& c) { c.input_grads[0]->values() += c.output_grad.values(); });
}

Var slice_cols(Var x, Index begin, Index count) {
  const Tensor& v = x.value();
  if (v.rank() != 2 || begin < 0 || count <= 0 || begin + count > v.dim(1))
    throw ShapeError("slice_cols: range out of bounds for " + shape_string(v.shape()));
  const Index rows = v.dim(0);
  Tensor y({rows, count});
  y.matrix(rows) = v.matrix(rows).middleCols(begin, count);
  return x.graph().record("slice_cols", std::move(y), {x}, [rows, begin, count](GradContext& c) {
    c.input_grads[0]->matrix(rows).middleCols(begin, count) += c.output_grad.matrix(rows);
  });
}

Var row_mean(Var x) {
  const Tensor& v = x.value();
  if (v.rank() != 2) throw ShapeError("row_mean: input must be rank 2");
  const Index rows = v.dim(0), cols = v.dim(1);
  Tensor y({rows}, Eigen::VectorXd(v.matrix(rows).rowwise().mean()));
  return x.graph().record("row_mean", std::move(y), {x}, [rows, cols](GradContext& c) {
    c.input_grads[0]->matrix(rows).colwise() += c.output_grad.values() / static_cast<double>(cols);
  });
}

Var concat_rows(Var a, Var b) {
  const Tensor &va = a.value(), &vb = b.value();
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(1))
    throw ShapeError("concat_rows: incompatible shapes");
  const Index na = va.dim(0), nb = vb.dim(0);
  Eigen::VectorXd v(va.size() + vb.size());
  v << va.values(), vb.values();
  return a.graph().record("concat_rows", Tensor({na + nb, va.dim(1)}, std::move(v)), {a, b},
                          [](GradContext& c) {
                            const Index sa = c.inputs[0]->size();
                            if (c.input_grads[0]) c.input_grads[0]->values() += c.output_grad.values().head(sa);
                            if (c.input_grads[1])
                              c.input_grads[1]->values() += c.output_grad.values().tail(c.inputs[1]->size());
                          });
}

Var linear(Var x, Var w, std::optional<Var> b) {
  Tensor y = kernels::linear(x.value(), w.value(), b ? &b->value() : nullptr);
  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(*b);
  return x.graph().record("linear", std::move(y), std::move(inputs), [](GradContext& c) {
    const Tensor &xv = *c.inputs[0], &wv = *c.inputs[1];
    const Index n = xv.dim(0), dout = wv.dim(0);
    const auto dy = c.output_grad.matrix(n);
    if (c.input_grads[0]) c.input_grads[0]->matrix(n).noalias() += dy * wv.matrix(dout);
    if (c.input_grads[1]) c.input_grads[1]->matrix(dout).noalias() += dy.transpose() * xv.matrix(n);
    if (c.input_grads.size() > 2 && c.input_grads[2])
      c.input_grads[2]->values() += dy.colwise().sum().transpose();
  });
}

Var conv1d(Var x, Var w, std::optional<Var> bias, int stride, Index padding) {
  Tensor y = kernels::conv1d(x.value(), w.value(), bias ? &bias->value() : nullptr, stride, padding);
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return x.graph().record("conv1d", std::move(y), std::move(inputs), [stride, padding](GradContext& c) {
    kernels::conv1d_backward(*c.inputs[0], *c.inputs[1], c.output_grad, stride, padding, c.input_grads[0],
                             c.input_grads[1], c.input_grads.size() > 2 ? c.input_grads[2] : nullptr);
  });
}

Var global_avg_pool(Var x) {
  return x.graph().record("global_avg_pool", kernels::global_avg_pool(x.value()), {x}, [](GradContext& c) {
    const Tensor& xv = *c.inputs[0];
    const Index rows = xv.dim(0) * xv.dim(1), len = xv.dim(2);
    c.input_grads[0]->matrix(rows).colwise() += c.output_grad.values() / static_cast<double>(len);
  });
}

Var batch_norm1d(Var x, Var gamma, Var beta, Parameter& running_mean, Parameter& running_var,
                 bool training, double momentum, double eps) {
  Graph& g = x.graph();
  if (!training) {
    const Tensor rm = running_mean.value, rv = running_var.value;
    Tensor y = kernels::batch_norm_infer(x.value(), gamma.value(), beta.value(), rm, rv, eps);
    return g.record("batch_norm1d", std::move(y), {x, gamma, beta}, [rm, rv, eps](GradContext& c) {
      const Tensor& xv = *c.inputs[0];
      const Index n = xv.dim(0), ch = xv.dim(1), l = xv.dim(2);
      const Eigen::VectorXd inv_std = (rv.values().array() + eps).rsqrt().matrix();
      const Eigen::VectorXd& gam = c.inputs[1]->values();
      for (Index b = 0; b < n; ++b)
        for (Index k = 0; k < ch; ++k) {
          const Index off = (b * ch + k) * l;
          const auto dy = c.output_grad.values().segment(off, l);
          if (c.input_grads[0]) c.input_grads[0]->values().segment(off, l) += dy * (gam[k] * inv_std[k]);
          if (c.input_grads[1])
            (*c.input_grads[1])[k] +=
                dy.dot((xv.values().segment(off, l).array() - rm[k]).matrix()) * inv_std[k];
          if (c.input_grads[2]) (*c.input_grads[2])[k] += dy.sum();
        }
    });
  }
  kernels::BatchNormStats stats;
  Tensor y = kernels::batch_norm_train(x.value(), gamma.value(), beta.value(), eps, &stats);
  const double unbias = stats.count > 1 ? static_cast<double>(stats.count) / (stats.count - 1) : 1.0;
  running_mean.value.values() = (1.0 - momentum) * running_mean.value.values() + momentum * stats.mean;
  running_var.value.values() = (1.0 - momentum) * running_var.value.values() + momentum * unbias * stats.var;
  return g.record("batch_norm1d", std::move(y), {x, gamma, beta}, [stats](GradContext& c) {
    const Tensor& xv = *c.inputs[0];
    const Index n = xv.dim(0), ch = xv.dim(1), l = xv.dim(2);
    const Eigen::VectorXd& gam = c.inputs[1]->values();
    const double count = static_cast<double>(stats.count);
    for (Index k = 0; k < ch; ++k) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (Index b = 0; b < n; ++b) {
        const Index off = (b * ch + k) * l;
        const auto dy = c.output_grad.values().segment(off, l).array();
        const auto xhat = (xv.values().segment(off, l).array() - stats.mean[k]) * stats.inv_std[k];
        sum_dy += dy.sum();
        sum_dy_xhat += (dy * xhat).sum();
      }
      if (c.input_grads[1]) (*c.input_grads[1])[k] += sum_dy_xhat;
      if (c.input_grads[2]) (*c.input_grads[2])[k] += sum_dy;
      if (c.input_grads[0]) {
        const double a = gam[k] * stats.inv_std[k];
        for (Index b = 0; b < n; ++b) {
          const Index off = (b * ch + k) * l;
          const auto dy = c.output_grad.values().segment(off, l).array();
          const auto xhat = (xv.values().segment(off, l).array() - stats.mean[k]) * stats.inv_std[k];
          c.input_grads[0]->values().segment(off, l).array() +=
              a * (dy - sum_dy / count - xhat * (sum_dy_xhat / count));
        }
      }
    }
  });
}

Var cosine_similarity(Var a, Var b) {
  same_shape(a, b, "cosine_similarity");
  if (a.value().rank() != 1) throw ShapeError("cosine_similarity: inputs must be vectors");
  const double na = a.value().values().norm(), nb = b.value().values().norm();
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine_similarity: zero vector");
  const double dot = a.value().values().dot(b.value().values());
  const double cs = dot / (na * nb);
  return a.graph().record("cosine_similarity", Tensor::scalar(cs), {a, b}, [na, nb, cs](GradContext& c) {
    const auto& av = c.inputs[0]->values();
    const auto& bv = c.inputs[1]->values();
    const double g = c.output_grad[0];
    if (c.input_grads[0]) c.input_grads[0]->values() += g * (bv / (na * nb) - cs * av / (na * na));
    if (c.input_grads[1]) c.input_grads[1]->values() += g * (av / (na * nb) - cs * bv / (nb * nb));
  });
}

}  // namespace cdpam
