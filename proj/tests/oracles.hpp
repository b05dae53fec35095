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

// Independent reference implementations used by the unit tests and the
// acceptance binary.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdpam/autograd.hpp"

namespace cdpam::oracle {

// Explicit 2N x 2N cosine-similarity matrix and per-anchor log-sum-exp.
double nt_xent_bruteforce(const Eigen::MatrixXd& z_i, const Eigen::MatrixXd& z_j, double tau);

// O(n^2) rank counting followed by a textbook Pearson sum.
double spearman_bruteforce(const std::vector<double>& x, const std::vector<double>& y);

// Direct-summation cross-correlation, [B, Ci, L] x [Co, Ci, K].
Tensor conv1d_direct(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, Index padding);

struct GradCase {
  std::string name;
  std::vector<Tensor> inputs;
  // Builds a scalar from leaves bound to the inputs.
  std::function<Var(Graph&, const std::vector<Var>&)> build;
};

struct GradResult {
  std::string name;
  double max_rel_error = 0.0;  // norm-wise, worst input
  bool ok = false;
};

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTolerance = 1e-4;

// Central differences against Graph::backward. Relative error per input is
// ||analytic - numeric|| / max(||analytic||, ||numeric||).
GradResult check_gradient(const GradCase& c, double h = kFdStep, double tol = kFdTolerance);

// Randomised cases over every differentiable op and the three losses.
std::vector<GradCase> gradient_suite(std::uint64_t seed);

}  // namespace cdpam::oracle
