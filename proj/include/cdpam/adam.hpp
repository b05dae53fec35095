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

#include <span>
#include <vector>

#include "cdpam/autograd.hpp"

namespace cdpam {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments are created lazily on the first step and keep the parameter order.
struct AdamState {
  AdamState() = default;
  explicit AdamState(const AdamConfig& c) : config(c) {}

  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  long step_count = 0;
};

// One bias-corrected Adam update of every parameter from its .grad.
void adam_step(std::span<Parameter* const> params, AdamState& state);

}  // namespace cdpam
