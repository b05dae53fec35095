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

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "cdpam/kernels.hpp"
#include "cdpam/losses.hpp"
#include "cdpam/rng.hpp"

namespace cdpam::oracle {

double nt_xent_bruteforce(const Eigen::MatrixXd& z_i, const Eigen::MatrixXd& z_j, double tau) {
  const Eigen::Index n = z_i.rows();
  Eigen::MatrixXd z(2 * n, z_i.cols());
  z << z_i, z_j;
  Eigen::MatrixXd sim(2 * n, 2 * n);
  for (Eigen::Index a = 0; a < 2 * n; ++a)
    for (Eigen::Index b = 0; b < 2 * n; ++b)
      sim(a, b) = z.row(a).dot(z.row(b)) / (z.row(a).norm() * z.row(b).norm());
  double total = 0.0;
  for (Eigen::Index a = 0; a < 2 * n; ++a) {
    const Eigen::Index pos = a < n ? a + n : a - n;
    double m = -1e300;
    for (Eigen::Index b = 0; b < 2 * n; ++b)
      if (b != a) m = std::max(m, sim(a, b) / tau);
    double s = 0.0;
    for (Eigen::Index b = 0; b < 2 * n; ++b)
      if (b != a) s += std::exp(sim(a, b) / tau - m);
    total += -(sim(a, pos) / tau) + m + std::log(s);
  }
  return total / static_cast<double>(2 * n);
}

double spearman_bruteforce(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  auto ranks = [n](const std::vector<double>& v) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) {
      double below = 0.0, equal = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (v[j] < v[i]) below += 1.0;
        if (v[j] == v[i]) equal += 1.0;
      }
      r[i] = below + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

Tensor conv1d_direct(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, Index padding) {
  const Index B = x.shape()[0], Ci = x.shape()[1], L = x.shape()[2];
  const Index Co = w.shape()[0], K = w.shape()[2];
  const Index Lo = L / stride;
  Tensor y({B, Co, Lo});
  auto X = [&](Index b, Index c, Index t) { return x.values()[(b * Ci + c) * L + t]; };
  auto W = [&](Index o, Index c, Index j) { return w.values()[(o * Ci + c) * K + j]; };
  for (Index b = 0; b < B; ++b)
    for (Index o = 0; o < Co; ++o)
      for (Index t = 0; t < Lo; ++t) {
        double s = bias ? bias->values()[o] : 0.0;
        for (Index c = 0; c < Ci; ++c)
          for (Index j = 0; j < K; ++j) {
            const Index src = t * stride + j - padding;
            if (src >= 0 && src < L) s += X(b, c, src) * W(o, c, j);
          }
        y.values()[(b * Co + o) * Lo + t] = s;
      }
  return y;
}

namespace {

struct Leaves {
  std::vector<std::unique_ptr<Parameter>> params;
};

double evaluate(const GradCase& c, const std::vector<Tensor>& inputs, std::vector<Tensor>* grads) {
  Leaves leaves;
  Graph g;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) {
    leaves.params.push_back(std::make_unique<Parameter>());
    leaves.params.back()->value = t;
    vars.push_back(g.param(*leaves.params.back()));
  }
  Var root = c.build(g, vars);
  const double v = g.value(root).item();
  if (grads) {
    g.backward(root);
    grads->clear();
    for (const auto& p : leaves.params)
      grads->push_back(p->grad.size() ? p->grad : Tensor::zeros(p->value.shape()));
  }
  return v;
}

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for ops with a kink at the origin.
Tensor away_from_zero(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 1.0);
  return t;
}

// Scalar root with a non-uniform upstream gradient.
Var weigh(Graph& g, Var y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, g.constant(random_tensor(rng, y.shape()))));
}

Index pick(Rng& rng, Index lo, Index hi) { return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

}  // namespace

GradResult check_gradient(const GradCase& c, double h, double tol) {
  GradResult res;
  res.name = c.name;
  std::vector<Tensor> analytic;
  evaluate(c, c.inputs, &analytic);
  for (std::size_t k = 0; k < c.inputs.size(); ++k) {
    Eigen::VectorXd numeric(c.inputs[k].size());
    for (Index i = 0; i < c.inputs[k].size(); ++i) {
      std::vector<Tensor> plus = c.inputs, minus = c.inputs;
      plus[k].values()[i] += h;
      minus[k].values()[i] -= h;
      numeric[i] = (evaluate(c, plus, nullptr) - evaluate(c, minus, nullptr)) / (2.0 * h);
    }
    const Eigen::VectorXd& a = analytic[k].values();
    const double denom = std::max({a.norm(), numeric.norm(), 1e-12});
    res.max_rel_error = std::max(res.max_rel_error, (a - numeric).norm() / denom);
  }
  res.ok = res.max_rel_error <= tol;
  return res;
}

std::vector<GradCase> gradient_suite(std::uint64_t seed) {
  std::vector<GradCase> cases;
  Rng rng(seed);
  auto name = [](const char* op, int r) { return std::string(op) + "#" + std::to_string(r); };

  for (int r = 0; r < 6; ++r) {
    const Index n = pick(rng, 1, 4), m = pick(rng, 1, 5);
    const std::uint64_t s = rng.next_u64();
    cases.push_back({name("add", r), {random_tensor(rng, {n, m}), random_tensor(rng, {n, m})},
                     [s](Graph& g, const std::vector<Var>& v) { return weigh(g, add(v[0], v[1]), s); }});
    cases.push_back({name("sub", r), {random_tensor(rng, {n, m}), random_tensor(rng, {n, m})},
                     [s](Graph& g, const std::vector<Var>& v) { return weigh(g, sub(v[0], v[1]), s); }});
    cases.push_back({name("mul", r), {random_tensor(rng, {n, m}), random_tensor(rng, {n, m})},
                     [s](Graph& g, const std::vector<Var>& v) { return weigh(g, mul(v[0], v[1]), s); }});
    const double k = rng.uniform(-2.0, 2.0);
    cases.push_back({name("scale_add_scalar", r), {random_tensor(rng, {n, m})}, [s, k](Graph& g, const std::vector<Var>& v) {
                       return weigh(g, add_scalar(scale(v[0], k), k), s);
                     }});
    cases.push_back({name("mean", r), {random_tensor(rng, {n, m})},
                     [](Graph&, const std::vector<Var>& v) { return mean(mul(v[0], v[0])); }});
    cases.push_back({name("abs", r), {away_from_zero(rng, {n, m})},
                     [s](Graph& g, const std::vector<Var>& v) { return weigh(g, abs(v[0]), s); }});
    cases.push_back({name("sigmoid", r), {random_tensor(rng, {n, m}, -3.0, 3.0)},
                     [s](Graph& g, const std::vector<Var>& v) { return weigh(g, sigmoid(v[0]), s); }});
    cases.push_back({name("leaky_relu", r), {away_from_zero(rng, {n, m})},
                     [s](Graph& g, const std::vector<Var>& v) { return weigh(g, leaky_relu(v[0], 0.2), s); }});
    cases.push_back({name("reshape", r), {random_tensor(rng, {n, m})}, [s, n, m](Graph& g, const std::vector<Var>& v) {
                       return weigh(g, reshape(v[0], {m * n}), s);
                     }});
    const Index cols = pick(rng, 2, 6), begin = pick(rng, 0, cols - 2), count = pick(rng, 1, cols - begin);
    cases.push_back({name("slice_cols", r), {random_tensor(rng, {n, cols})},
                     [s, begin, count](Graph& g, const std::vector<Var>& v) {
                       return weigh(g, slice_cols(v[0], begin, count), s);
                     }});
    cases.push_back({name("row_mean", r), {random_tensor(rng, {n, m})},
                     [s](Graph& g, const std::vector<Var>& v) { return weigh(g, row_mean(v[0]), s); }});
    const Index n2 = pick(rng, 1, 3);
    cases.push_back({name("concat_rows", r), {random_tensor(rng, {n, m}), random_tensor(rng, {n2, m})},
                     [s](Graph& g, const std::vector<Var>& v) { return weigh(g, concat_rows(v[0], v[1]), s); }});
    const Index din = pick(rng, 1, 6), dout = pick(rng, 1, 5);
    cases.push_back({name("linear", r),
                     {random_tensor(rng, {n, din}), random_tensor(rng, {dout, din}), random_tensor(rng, {dout})},
                     [s](Graph& g, const std::vector<Var>& v) { return weigh(g, linear(v[0], v[1], v[2]), s); }});
  }

  // conv1d: direct (small channel product) and im2col paths, both strides.
  for (int r = 0; r < 16; ++r) {
    const bool wide = r % 2 == 1;
    const Index ci = wide ? pick(rng, 8, 10) : pick(rng, 1, 3), co = wide ? pick(rng, 8, 9) : pick(rng, 1, 4);
    const Index kk = 2 * pick(rng, 0, 2) + 1;
    const int stride = r % 4 < 2 ? 1 : 2;
    const Index len = 2 * pick(rng, 2, 5), b = pick(rng, 1, 2);
    const bool with_bias = r % 3 != 0;
    const std::uint64_t s = rng.next_u64();
    std::vector<Tensor> in = {random_tensor(rng, {b, ci, len}), random_tensor(rng, {co, ci, kk})};
    if (with_bias) in.push_back(random_tensor(rng, {co}));
    cases.push_back({name(wide ? "conv1d_gemm" : "conv1d_direct", r), in,
                     [s, stride, kk, with_bias](Graph& g, const std::vector<Var>& v) {
                       std::optional<Var> bias;
                       if (with_bias) bias = v[2];
                       return weigh(g, conv1d(v[0], v[1], bias, stride, (kk - 1) / 2), s);
                     }});
  }

  for (int r = 0; r < 6; ++r) {
    const Index b = pick(rng, 1, 3), c = pick(rng, 1, 4), len = pick(rng, 1, 6);
    const std::uint64_t s = rng.next_u64();
    cases.push_back({name("global_avg_pool", r), {random_tensor(rng, {b, c, len})},
                     [s](Graph& g, const std::vector<Var>& v) { return weigh(g, global_avg_pool(v[0]), s); }});
  }

  // batch_norm1d in both modes; running buffers live with the case.
  for (int r = 0; r < 8; ++r) {
    const bool training = r % 2 == 0;
    const Index b = pick(rng, 2, 3), c = pick(rng, 1, 3), len = pick(rng, 2, 5);
    const std::uint64_t s = rng.next_u64();
    auto rm = std::make_shared<Parameter>(), rv = std::make_shared<Parameter>();
    rm->value = random_tensor(rng, {c}, -0.5, 0.5);
    rv->value = random_tensor(rng, {c}, 0.5, 2.0);
    rm->trainable = rv->trainable = false;
    cases.push_back({name(training ? "batch_norm_train" : "batch_norm_infer", r),
                     {random_tensor(rng, {b, c, len}), random_tensor(rng, {c}, 0.5, 1.5), random_tensor(rng, {c})},
                     [s, rm, rv, training](Graph& g, const std::vector<Var>& v) {
                       return weigh(g, batch_norm1d(v[0], v[1], v[2], *rm, *rv, training), s);
                     }});
  }

  for (int r = 0; r < 8; ++r) {
    const Index d = pick(rng, 2, 8);
    cases.push_back({name("cosine_similarity", r), {random_tensor(rng, {d}), random_tensor(rng, {d})},
                     [](Graph&, const std::vector<Var>& v) { return cosine_similarity(v[0], v[1]); }});
  }

  // Losses.
  for (int r = 0; r < 12; ++r) {
    const Index n = pick(rng, 2, 5), d = pick(rng, 2, 6);
    const double tau = rng.uniform(0.2, 1.0);
    if (r % 2 == 0)
      cases.push_back({name("nt_xent", r), {random_tensor(rng, {2 * n, d})},
                       [tau](Graph&, const std::vector<Var>& v) { return nt_xent(v[0], tau); }});
    else
      cases.push_back({name("nt_xent_pair", r), {random_tensor(rng, {n, d}), random_tensor(rng, {n, d})},
                       [tau](Graph&, const std::vector<Var>& v) { return nt_xent(v[0], v[1], tau); }});
  }
  for (int r = 0; r < 10; ++r) {
    const Index n = pick(rng, 1, 6);
    Tensor labels({n});
    for (Index i = 0; i < n; ++i) labels.values()[i] = static_cast<double>(rng.below(2));
    cases.push_back({name("bce", r), {random_tensor(rng, {n}, -4.0, 4.0)},
                     [labels](Graph&, const std::vector<Var>& v) { return bce(sigmoid(v[0]), labels); }});
  }
  for (int r = 0; r < 10; ++r) {
    const Index n = pick(rng, 1, 6);
    const double margin = r % 2 ? kDefaultMargin : rng.uniform(0.0, 0.5);
    Tensor a({n}), b({n});
    for (Index i = 0; i < n; ++i) {
      // Keep d_pref - d_other + margin away from the hinge.
      do {
        a.values()[i] = rng.uniform(0.0, 1.0);
        b.values()[i] = rng.uniform(0.0, 1.0);
      } while (std::abs(a.values()[i] - b.values()[i] + margin) < 0.02);
    }
    cases.push_back({name("margin_rank", r), {a, b}, [margin](Graph&, const std::vector<Var>& v) {
                       return margin_rank(v[0], v[1], margin);
                     }});
  }

  // Small two-layer conv nets and a loss-net style distance.
  for (int r = 0; r < 8; ++r) {
    const Index b = 2, c1 = pick(rng, 1, 3), c2 = pick(rng, 2, 4), len = 8, d = pick(rng, 2, 4);
    const std::uint64_t s = rng.next_u64();
    auto rm = std::make_shared<Parameter>(), rv = std::make_shared<Parameter>();
    rm->value = Tensor::zeros({c2});
    rv->value = Tensor::constant({c2}, 1.0);
    cases.push_back({name("conv_net", r),
                     {random_tensor(rng, {b, 1, len}), random_tensor(rng, {c1, 1, 3}), random_tensor(rng, {c2, c1, 5}),
                      random_tensor(rng, {c2}, 0.5, 1.5), random_tensor(rng, {c2}), random_tensor(rng, {d, c2}),
                      random_tensor(rng, {d})},
                     [s, rm, rv](Graph& g, const std::vector<Var>& v) {
                       Var h = leaky_relu(conv1d(v[0], v[1], std::nullopt, 1, 1), 0.2);
                       h = conv1d(h, v[2], std::nullopt, 2, 2);
                       h = leaky_relu(batch_norm1d(h, v[3], v[4], *rm, *rv, true), 0.2);
                       return weigh(g, linear(global_avg_pool(h), v[5], v[6]), s);
                     }});
  }
  for (int r = 0; r < 6; ++r) {
    const Index n = pick(rng, 1, 4), d = pick(rng, 2, 5), hdim = pick(rng, 2, 4);
    std::vector<Tensor> in;
    // Redraw until every kink of leaky_relu and abs is at least 1e-3 away.
    for (;;) {
      in = {random_tensor(rng, {n, d}), random_tensor(rng, {n, d}), random_tensor(rng, {hdim, d})};
      const Tensor pa = kernels::linear(in[0], in[2], nullptr), pb = kernels::linear(in[1], in[2], nullptr);
      const Tensor fa = kernels::leaky_relu(pa, 0.2), fb = kernels::leaky_relu(pb, 0.2);
      if (pa.values().cwiseAbs().minCoeff() > 1e-3 && pb.values().cwiseAbs().minCoeff() > 1e-3 &&
          (fa.values() - fb.values()).cwiseAbs().minCoeff() > 1e-3)
        break;
    }
    cases.push_back({name("feature_distance", r), in,
                     [](Graph&, const std::vector<Var>& v) {
                       Var fa = leaky_relu(linear(v[0], v[2]), 0.2);
                       Var fb = leaky_relu(linear(v[1], v[2]), 0.2);
                       return sum(row_mean(abs(sub(fa, fb))));
                     }});
  }
  return cases;
}

}  // namespace cdpam::oracle
