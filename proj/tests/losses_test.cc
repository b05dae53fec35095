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

#include <cmath>

#include "cdpam/rng.hpp"
#include "gtest/gtest.h"
#include "oracles.hpp"

namespace cdpam {
namespace {

Eigen::MatrixXd random_matrix(Index rows, Index cols, Rng& rng) {
  return Eigen::MatrixXd::NullaryExpr(rows, cols, [&] { return rng.normal(); });
}

Tensor to_tensor(const Eigen::MatrixXd& m) {
  Tensor t({m.rows(), m.cols()});
  t.matrix(m.rows()) = m;
  return t;
}

double loss_of(const Eigen::MatrixXd& zi, const Eigen::MatrixXd& zj, double tau) {
  return nt_xent(ContrastiveBatch{to_tensor(zi), to_tensor(zj), tau});
}

TEST(NtXent, OrthonormalExample) {
  const Eigen::MatrixXd e = Eigen::MatrixXd::Identity(2, 4);
  const double expected = -2.0 + std::log(std::exp(2.0) + 2.0);
  EXPECT_NEAR(loss_of(e, e, 0.5), expected, 1e-12);
}

TEST(NtXent, IdenticalEmbeddingsGiveLogTwoNMinusOne) {
  for (Index n : {2, 4, 16}) {
    const Eigen::MatrixXd z = Eigen::MatrixXd::Ones(n, 3);
    EXPECT_NEAR(loss_of(z, z, 0.5), std::log(2.0 * n - 1.0), 1e-12);
  }
}

TEST(NtXent, MatchesBruteForce) {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(10)), d = 1 + static_cast<Index>(rng.below(8));
    const double tau = rng.uniform(0.05, 2.0);
    const Eigen::MatrixXd zi = random_matrix(n, d, rng), zj = random_matrix(n, d, rng);
    EXPECT_NEAR(loss_of(zi, zj, tau), oracle::nt_xent_bruteforce(zi, zj, tau), 1e-10);
    Graph g;
    EXPECT_NEAR(nt_xent(g.constant(to_tensor(zi)), g.constant(to_tensor(zj)), tau).value().item(),
                oracle::nt_xent_bruteforce(zi, zj, tau), 1e-10);
  }
}

TEST(NtXent, Invariances) {
  Rng rng(2);
  const Eigen::MatrixXd zi = random_matrix(6, 5, rng), zj = random_matrix(6, 5, rng);
  const double base = loss_of(zi, zj, 0.5);
  EXPECT_NEAR(loss_of(zj, zi, 0.5), base, 1e-12);
  Eigen::MatrixXd scaled = zi;
  for (Index r = 0; r < 6; ++r) scaled.row(r) *= rng.uniform(0.1, 10.0);
  EXPECT_NEAR(loss_of(scaled, zj, 0.5), base, 1e-12);
  Eigen::MatrixXd pi = zi, pj = zj;
  pi.row(0).swap(pi.row(3));
  pj.row(0).swap(pj.row(3));
  EXPECT_NEAR(loss_of(pi, pj, 0.5), base, 1e-12);
  EXPECT_GE(base, 0.0);
}

TEST(NtXent, GradientStepDecreasesLoss) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    ParameterSet ps;
    Parameter& zi = ps.add("zi", to_tensor(random_matrix(8, 4, rng)));
    Parameter& zj = ps.add("zj", to_tensor(random_matrix(8, 4, rng)));
    Graph g;
    const Var loss = nt_xent(g.param(zi), g.param(zj), 0.5);
    g.backward(loss);
    const double before = loss.value().item();
    zi.value.values() -= 1e-3 * zi.grad.values();
    zj.value.values() -= 1e-3 * zj.grad.values();
    Graph g2;
    EXPECT_LT(nt_xent(g2.param(zi), g2.param(zj), 0.5).value().item(), before);
  }
}

TEST(NtXent, Preconditions) {
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 3);
  EXPECT_THROW(loss_of(one, one, 0.5), PreconditionError);
  const Eigen::MatrixXd z = Eigen::MatrixXd::Ones(2, 3);
  EXPECT_THROW(loss_of(z, z, 0.0), PreconditionError);
  EXPECT_THROW(loss_of(z, Eigen::MatrixXd::Ones(2, 4), 0.5), ShapeError);
  Eigen::MatrixXd zero = z;
  zero.row(1).setZero();
  EXPECT_THROW(loss_of(zero, z, 0.5), DegenerateInputError);
}

TEST(Bce, ExamplesAndClamp) {
  EXPECT_NEAR(bce(0.5, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce(0.5, 0), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce(0.9, 1), -std::log(0.9), 1e-15);
  EXPECT_NEAR(bce(0.9, 0), -std::log(0.1), 1e-12);
  EXPECT_NEAR(bce(1.0, 0), -std::log(kBceClamp), 1e-9);
  EXPECT_NEAR(bce(0.0, 1), -std::log(kBceClamp), 1e-9);
  EXPECT_TRUE(std::isfinite(bce(0.0, 1)));
  EXPECT_THROW(bce(0.5, 2), PreconditionError);

  Graph g;
  const Var p = g.constant(Tensor({3}, {0.5, 0.9, 0.2}));
  EXPECT_NEAR(bce(p, Tensor({3}, {1, 1, 0})).value().item(),
              (std::log(2.0) - std::log(0.9) - std::log(0.8)) / 3.0, 1e-12);
  EXPECT_THROW(bce(p, Tensor({2}, {1, 0})), ShapeError);
}

TEST(Bce, MinimisedAtLabel) {
  for (double p = 0.05; p < 1.0; p += 0.05) {
    EXPECT_GT(bce(p, 1), bce(std::min(1.0, p + 0.01), 1));
    EXPECT_LT(bce(p, 0), bce(std::min(1.0, p + 0.01), 0));
  }
}

TEST(MarginRank, Examples) {
  EXPECT_DOUBLE_EQ(margin_rank(0.2, 0.5, 0.1), 0.0);
  EXPECT_NEAR(margin_rank(0.5, 0.2, 0.1), 0.4, 1e-15);
  EXPECT_NEAR(margin_rank(0.3, 0.3, 0.1), 0.1, 1e-15);
  EXPECT_DOUBLE_EQ(margin_rank(0.0, 0.1, 0.1), 0.0);

  Graph g;
  const Var a = g.constant(Tensor({2}, {0.5, 0.2}));
  const Var b = g.constant(Tensor({2}, {0.2, 0.5}));
  EXPECT_NEAR(margin_rank(a, b, 0.1).value().item(), 0.2, 1e-15);
  EXPECT_THROW(margin_rank(a, g.constant(Tensor({3})), 0.1), ShapeError);
}

TEST(MarginRank, NonNegativeAndMonotone) {
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const double p = rng.uniform(0, 1), o = rng.uniform(0, 1);
    EXPECT_GE(margin_rank(p, o), 0.0);
    EXPECT_GE(margin_rank(p + 0.05, o), margin_rank(p, o));
    EXPECT_LE(margin_rank(p, o + 0.05), margin_rank(p, o));
  }
}

}  // namespace
}  // namespace cdpam
