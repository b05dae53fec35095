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

#include "cdpam/adam.hpp"

#include <cmath>

namespace cdpam {

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  if (state.first_moment.empty()) {
    for (const Parameter* p : params) {
      state.first_moment.push_back(Tensor::zeros(p->value.shape()));
      state.second_moment.push_back(Tensor::zeros(p->value.shape()));
    }
  }
  if (state.first_moment.size() != params.size())
    throw ShapeError("adam: parameter count changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->grad.empty()) params[i]->zero_grad();
    if (!params[i]->grad.same_shape(params[i]->value) ||
        !state.first_moment[i].same_shape(params[i]->value))
      throw ShapeError("adam: shape mismatch for parameter " + std::to_string(i));
  }
  const AdamConfig& c = state.config;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i].values();
    auto& v = state.second_moment[i].values();
    const auto& g = params[i]->grad.values();
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    params[i]->value.values().array() -=
        c.lr * (m.array() / correct1) / ((v.array() / correct2).sqrt() + c.eps);
  }
}

}  // namespace cdpam
