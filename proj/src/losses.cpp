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

#include "cdpam/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cdpam {

void ContrastiveBatch::validate() const {
  if (z_i.rank() != 2 || z_i.shape() != z_j.shape())
    throw ShapeError("contrastive batch: z_i and z_j must be matching [N, d]");
  if (z_i.dim(0) < 2) throw PreconditionError("contrastive batch: need N >= 2 pairs");
  if (!(tau > 0.0)) throw PreconditionError("contrastive batch: tau must be positive");
  const Index n = z_i.dim(0);
  for (Index k = 0; k < n; ++k)
    if (z_i.matrix(n).row(k).norm() == 0.0 || z_j.matrix(n).row(k).norm() == 0.0)
      throw DegenerateInputError("contrastive batch: zero vector");
}

Var nt_xent(Var z, double tau) {
  const Tensor& zv = z.value();
  if (zv.rank() != 2 || zv.dim(0) < 4 || zv.dim(0) % 2 != 0)
    throw ShapeError("nt_xent: z must be [2N, d] with N >= 2, got " + shape_string(zv.shape()));
  if (!(tau > 0.0)) throw PreconditionError("nt_xent: tau must be positive");
  const Index m = zv.dim(0), half = m / 2;
  const auto zm = zv.matrix(m);
  const Eigen::VectorXd norms = zm.rowwise().norm();
  if ((norms.array() == 0.0).any()) throw DegenerateInputError("nt_xent: zero vector");
  const RowMatrixXd u = norms.cwiseInverse().asDiagonal() * zm;
  const RowMatrixXd sim = u * u.transpose();

  // Softmax over the non-self logits of each anchor.
  RowMatrixXd prob = RowMatrixXd::Zero(m, m);
  double loss = 0.0;
  for (Index k = 0; k < m; ++k) {
    const Index pos = (k + half) % m;
    double top = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < m; ++j)
      if (j != k) top = std::max(top, sim(k, j) / tau);
    double denom = 0.0;
    for (Index j = 0; j < m; ++j)
      if (j != k) denom += std::exp(sim(k, j) / tau - top);
    for (Index j = 0; j < m; ++j)
      if (j != k) prob(k, j) = std::exp(sim(k, j) / tau - top) / denom;
    loss += -(sim(k, pos) / tau - top) + std::log(denom);
  }
  loss /= static_cast<double>(m);

  return z.graph().record(
      "nt_xent", Tensor::scalar(loss), {z}, [u, prob, norms, tau, m, half](GradContext& c) {
        RowMatrixXd g = prob;
        for (Index k = 0; k < m; ++k) g(k, (k + half) % m) -= 1.0;
        g *= c.output_grad[0] / (tau * static_cast<double>(m));
        const RowMatrixXd du = (g + g.transpose()) * u;
        auto dz = c.input_grads[0]->matrix(m);
        for (Index k = 0; k < m; ++k) {
          const double radial = u.row(k).dot(du.row(k));
          dz.row(k) += (du.row(k) - radial * u.row(k)) / norms[k];
        }
      });
}

Var nt_xent(Var z_i, Var z_j, double tau) { return nt_xent(concat_rows(z_i, z_j), tau); }

double nt_xent(const ContrastiveBatch& batch) {
  batch.validate();
  Graph g;
  return nt_xent(g.constant(batch.z_i), g.constant(batch.z_j), batch.tau).value().item();
}

double bce(double p, int label) {
  if (label != 0 && label != 1) throw PreconditionError("bce: label must be 0 or 1");
  const double q = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
  return label ? -std::log(q) : -std::log1p(-q);
}

Var bce(Var p, const Tensor& labels) {
  if (!p.value().same_shape(labels)) throw ShapeError("bce: labels must match predictions");
  const Index n = labels.size();
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double l = labels[i];
    if (l != 0.0 && l != 1.0) throw PreconditionError("bce: label must be 0 or 1");
    loss += bce(p.value()[i], static_cast<int>(l));
  }
  loss /= static_cast<double>(n);
  return p.graph().record("bce", Tensor::scalar(loss), {p}, [labels, n](GradContext& c) {
    const double scale = c.output_grad[0] / static_cast<double>(n);
    for (Index i = 0; i < n; ++i) {
      const double raw = (*c.inputs[0])[i];
      if (raw < kBceClamp || raw > 1.0 - kBceClamp) continue;  // clamped: flat
      (*c.input_grads[0])[i] += scale * (labels[i] ? -1.0 / raw : 1.0 / (1.0 - raw));
    }
  });
}

double margin_rank(double d_pref, double d_other, double margin) {
  return std::max(0.0, d_pref - d_other + margin);
}

Var margin_rank(Var d_pref, Var d_other, double margin) {
  if (d_pref.shape() != d_other.shape()) throw ShapeError("margin_rank: shape mismatch");
  const Index n = d_pref.value().size();
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) loss += margin_rank(d_pref.value()[i], d_other.value()[i], margin);
  loss /= static_cast<double>(n);
  return d_pref.graph().record(
      "margin_rank", Tensor::scalar(loss), {d_pref, d_other}, [margin, n](GradContext& c) {
        const double scale = c.output_grad[0] / static_cast<double>(n);
        for (Index i = 0; i < n; ++i) {
          if ((*c.inputs[0])[i] - (*c.inputs[1])[i] + margin <= 0.0) continue;
          if (c.input_grads[0]) (*c.input_grads[0])[i] += scale;
          if (c.input_grads[1]) (*c.input_grads[1])[i] -= scale;
        }
      });
}

}  // namespace cdpam
