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

#include <cmath>

#include "cdpam/adam.hpp"
#include "cdpam/autograd.hpp"
#include "cdpam/kernels.hpp"
#include "cdpam/rng.hpp"
#include "gtest/gtest.h"
#include "oracles.hpp"

namespace cdpam {
namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

void expect_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  EXPECT_LE((a.values() - b.values()).cwiseAbs().maxCoeff(), tol);
}

TEST(TensorBasics, ShapesAndItem) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(t.matrix(2)(1, 0), 4.0);
  EXPECT_EQ(t.reshaped({3, 2}).matrix(3)(2, 1), 6.0);
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Conv1d, WorkedExample) {
  const Tensor x({1, 1, 3}, {1, 2, 3});
  const Tensor w({1, 1, 3}, {1, 0, -1});
  const Tensor y = kernels::conv1d(x, w, nullptr, 1, 1);
  expect_near(y, Tensor({1, 1, 3}, {-2, -2, 2}), 1e-15);
}

TEST(Conv1d, FlippedKernelIsConvolution) {
  Rng rng(3);
  const Tensor x = random_tensor({1, 1, 20}, rng);
  const Tensor w = random_tensor({1, 1, 5}, rng);
  const Tensor y = kernels::conv1d(x, w, nullptr, 1, 2);
  // True convolution of x with the reversed kernel, centred.
  for (Index n = 0; n < y.dim(2); ++n) {
    double acc = 0.0;
    for (Index k = 0; k < 5; ++k) {
      const Index src = n + 2 - k;
      if (src >= 0 && src < 20) acc += x[src] * w[4 - k];
    }
    EXPECT_NEAR(y[n], acc, 1e-12);
  }
}

TEST(Conv1d, MatchesDirectOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Index ci = 1 + static_cast<Index>(rng.below(12)), co = 1 + static_cast<Index>(rng.below(12));
    const Index k = 1 + 2 * static_cast<Index>(rng.below(3));
    const int stride = 1 + static_cast<int>(rng.below(2));
    const Index pad = (k - 1) / 2;
    const Tensor x = random_tensor({2, ci, 2 * (8 + static_cast<Index>(rng.below(6)))}, rng);
    const Tensor w = random_tensor({co, ci, k}, rng);
    const Tensor b = random_tensor({co}, rng);
    expect_near(kernels::conv1d(x, w, &b, stride, pad), oracle::conv1d_direct(x, w, &b, stride, pad), 1e-10);
  }
}

TEST(Conv1d, ShapeErrors) {
  const Tensor x({1, 2, 8});
  EXPECT_THROW(kernels::conv1d(x, Tensor({1, 3, 3}), nullptr, 1, 0), ShapeError);
  EXPECT_THROW(kernels::conv1d(Tensor({2, 8}), Tensor({1, 2, 3}), nullptr, 1, 0), ShapeError);
  EXPECT_THROW(kernels::conv1d(x, Tensor({1, 2, 3}), nullptr, 1, 0), PreconditionError);
}

TEST(Elementwise, LeakyPoolLinear) {
  expect_near(kernels::leaky_relu(Tensor({4}, {-2, -0.5, 0, 3}), 0.2), Tensor({4}, {-0.4, -0.1, 0, 3}), 1e-15);
  expect_near(kernels::global_avg_pool(Tensor({1, 2, 3}, {1, 2, 3, 4, 5, 6})), Tensor({1, 2}, {2, 5}), 1e-15);
  const Tensor x({1, 2}, {1, 2});
  const Tensor w({2, 2}, {1, 0, 1, 1});
  const Tensor b({2}, {0.5, -1});
  expect_near(kernels::linear(x, w, &b), Tensor({1, 2}, {1.5, 2}), 1e-15);
  EXPECT_THROW(kernels::linear(x, Tensor({2, 3}), nullptr), ShapeError);
}

TEST(BatchNorm, TrainNormalisesInferUsesRunning) {
  Rng rng(5);
  Tensor x = random_tensor({4, 3, 10}, rng);
  for (Index i = 0; i < x.size(); ++i) x[i] = 3.0 * x[i] + 2.0;
  const Tensor gamma = Tensor::constant({3}, 1.0), beta = Tensor::zeros({3});
  kernels::BatchNormStats stats;
  const Tensor y = kernels::batch_norm_train(x, gamma, beta, 1e-5, &stats);
  for (Index c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (Index b = 0; b < 4; ++b)
      for (Index t = 0; t < 10; ++t) m += y[(b * 3 + c) * 10 + t] / 40;
    for (Index b = 0; b < 4; ++b)
      for (Index t = 0; t < 10; ++t) v += std::pow(y[(b * 3 + c) * 10 + t] - m, 2) / 40;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
  const Tensor rm({3}, {1, 2, 3}), rv({3}, {4, 4, 4});
  const Tensor xi({1, 3, 1}, {3, 4, 5});
  expect_near(kernels::batch_norm_infer(xi, gamma, beta, rm, rv, 0.0), Tensor({1, 3, 1}, {1, 1, 1}), 1e-12);
}

TEST(BatchNorm, RunningStatsUpdate) {
  ParameterSet ps;
  Parameter& gamma = ps.add("g", Tensor::constant({1}, 1.0));
  Parameter& beta = ps.add("b", Tensor::zeros({1}));
  Parameter& rm = ps.add("rm", Tensor::zeros({1}), false);
  Parameter& rv = ps.add("rv", Tensor::constant({1}, 1.0), false);
  Graph g;
  batch_norm1d(g.constant(Tensor({2, 1, 2}, {1, 3, 5, 7})), g.param(gamma), g.param(beta), rm, rv, true);
  EXPECT_NEAR(rm.value[0], 0.1 * 4.0, 1e-12);
  // Unbiased batch variance of {1,3,5,7} is 20/3.
  EXPECT_NEAR(rv.value[0], 0.9 + 0.1 * 20.0 / 3.0, 1e-12);
}

TEST(Autograd, BackwardExamples) {
  ParameterSet ps;
  Parameter& a = ps.add("a", Tensor({2}, {1, -2}));
  Parameter& b = ps.add("b", Tensor({2}, {3, 4}));
  Graph g;
  const Var va = g.param(a), vb = g.param(b);
  g.backward(sum(va * vb));
  expect_near(a.grad, b.value, 1e-15);
  expect_near(b.grad, a.value, 1e-15);

  Graph g2;
  g2.backward(sum(abs(g2.param(a))));
  expect_near(a.grad, Tensor({2}, {3 + 1, 4 - 1}), 1e-15);  // accumulated onto previous grad
}

TEST(Autograd, ConstantsGetNoGradient) {
  ParameterSet ps;
  Parameter& frozen = ps.add("f", Tensor({2}, {1, 2}), false);
  Graph g;
  const Var c = g.constant(Tensor({2}, {5, 6}));
  const Var f = g.param(frozen);
  EXPECT_FALSE(g.requires_grad(c));
  EXPECT_FALSE(g.requires_grad(f));
  const Var out = sum(c * f);
  g.backward(out);
  EXPECT_EQ(frozen.grad.size(), 0);
}

TEST(Autograd, NonFiniteRaises) {
  Graph g;
  const Var big = g.constant(Tensor({1}, {1e308}));
  EXPECT_THROW(scale(big, 10.0), NumericError);
  EXPECT_THROW(g.backward(g.constant(Tensor({2}))), ContractError);
}

TEST(Autograd, SigmoidAndCosine) {
  Graph g;
  EXPECT_NEAR(sigmoid(g.constant(Tensor::scalar(0.0))).value().item(), 0.5, 1e-15);
  const Var a = g.constant(Tensor({3}, {1, 0, 0}));
  const Var b = g.constant(Tensor({3}, {1, 1, 0}));
  EXPECT_NEAR(cosine_similarity(a, b).value().item(), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(cosine_similarity(a, a).value().item(), 1.0, 1e-15);
  EXPECT_THROW(cosine_similarity(a, g.constant(Tensor({3}))), DegenerateInputError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet ps;
  Parameter& p = ps.add("p", Tensor({3}, {1, 1, 1}));
  p.grad = Tensor({3}, {0.5, -2.0, 0.0});
  AdamState st(AdamConfig{.lr = 0.01});
  std::vector<Parameter*> params{&p};
  adam_step(params, st);
  EXPECT_NEAR(p.value[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.value[1], 1.0 + 0.01, 1e-9);
  EXPECT_NEAR(p.value[2], 1.0, 1e-15);
  EXPECT_EQ(st.step_count, 1);
}

TEST(Adam, ReferenceTrajectory) {
  // Textbook Adam on f(x) = x^2 from x = 2.
  ParameterSet ps;
  Parameter& p = ps.add("p", Tensor({1}, {2.0}));
  AdamState st(AdamConfig{.lr = 0.1});
  std::vector<Parameter*> params{&p};
  double x = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 50; ++t) {
    const double grad = 2.0 * x;
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    p.grad = Tensor({1}, {2.0 * p.value[0]});
    adam_step(params, st);
    ASSERT_NEAR(p.value[0], x, 1e-12);
  }
  EXPECT_LT(std::abs(x), 2.0);
}

}  // namespace
}  // namespace cdpam
