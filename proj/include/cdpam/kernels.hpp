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

#include "cdpam/tensor.hpp"

// Graph-free forward and backward kernels. The recorded ops in autograd.hpp
// call these; inference paths call them directly.
namespace cdpam::kernels {

// x: [batch, ch_in, len], w: [ch_out, ch_in, k], bias: [ch_out] or null.
// Cross-correlation with zero padding; k odd, padding == (k - 1) / 2,
// stride in {1, 2}, len divisible by stride. Output [batch, ch_out, len / stride].
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, Index padding);

// Accumulates (+=) into whichever of dx, dw, dbias is non-null.
void conv1d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride,
                     Index padding, Tensor* dx, Tensor* dw, Tensor* dbias);

// x: [batch, d_in], w: [d_out, d_in], b: [d_out] or null.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b);

Tensor leaky_relu(const Tensor& x, double slope);

// [batch, ch, len] -> [batch, ch]
Tensor global_avg_pool(const Tensor& x);

struct BatchNormStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;      // biased
  Eigen::VectorXd inv_std;
  Index count = 0;          // batch * len
};

// x: [batch, ch, len]. Normalises with batch statistics.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        BatchNormStats* stats);
Tensor batch_norm_infer(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        const Tensor& running_mean, const Tensor& running_var, double eps);

}  // namespace cdpam::kernels
