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

#include "cdpam/autograd.hpp"

namespace cdpam {

inline constexpr double kDefaultTemperature = 0.5;
inline constexpr double kDefaultMargin = 0.1;
inline constexpr double kBceClamp = 1e-7;

// N pairs of projected views; row k of z_i is the positive of row k of z_j.
struct ContrastiveBatch {
  Tensor z_i;  // [N, d]
  Tensor z_j;  // [N, d]
  double tau = kDefaultTemperature;

  // N >= 2, matching shapes, tau > 0, no zero rows.
  void validate() const;
};

// NT-Xent over z = [z_i; z_j] ([2N, d]): mean over the 2N anchors of the
// cross-entropy of a softmax over cosine similarity / tau against the other
// 2N - 1 rows, the partner (k +/- N) being the positive.
Var nt_xent(Var z, double tau = kDefaultTemperature);
Var nt_xent(Var z_i, Var z_j, double tau = kDefaultTemperature);
double nt_xent(const ContrastiveBatch& batch);

// Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
double bce(double p, int label);
// Mean BCE over a batch of probabilities; labels in {0, 1}, same shape as p.
Var bce(Var p, const Tensor& labels);

// max(0, d_pref - d_other + margin); d_pref is the distance of the preferred
// (closer) recording.
double margin_rank(double d_pref, double d_other, double margin = kDefaultMargin);
// Mean over a batch.
Var margin_rank(Var d_pref, Var d_other, double margin = kDefaultMargin);

}  // namespace cdpam
