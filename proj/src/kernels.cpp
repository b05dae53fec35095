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

#include "cdpam/kernels.hpp"

#include <algorithm>
#include <array>
#include <utility>
#include <cmath>
#include <cstring>
#include <vector>

namespace cdpam::kernels {

namespace {

using Eigen::InnerStride;
using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::VectorXd;

#ifndef CDPAM_CONV_CHUNK
#define CDPAM_CONV_CHUNK 32768
#endif
constexpr Index kChunkDoubles = CDPAM_CONV_CHUNK;

struct ConvGeometry {
  Index batch, ch_in, len, ch_out, k, out_len, padded_len, chunk;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, int stride, Index padding) {
  if (x.rank() != 3) throw ShapeError("conv1d: input must be [batch, ch, len], got " + shape_string(x.shape()));
  if (w.rank() != 3) throw ShapeError("conv1d: weight must be [out, in, k], got " + shape_string(w.shape()));
  ConvGeometry g{};
  g.batch = x.dim(0);
  g.ch_in = x.dim(1);
  g.len = x.dim(2);
  g.ch_out = w.dim(0);
  g.k = w.dim(2);
  if (w.dim(1) != g.ch_in)
    throw ShapeError("conv1d: weight expects " + std::to_string(w.dim(1)) + " input channels, got " +
                     std::to_string(g.ch_in));
  if (g.k % 2 == 0) throw ShapeError("conv1d: kernel size must be odd");
  if (padding != (g.k - 1) / 2) throw ShapeError("conv1d: padding must be (k - 1) / 2");
  if (stride != 1 && stride != 2) throw ShapeError("conv1d: stride must be 1 or 2");
  if (g.len % stride != 0) throw ShapeError("conv1d: length not divisible by stride");
  g.out_len = g.len / stride;
  g.padded_len = g.len + 2 * padding;
  const Index width = g.ch_in * g.k;
  g.chunk = std::clamp<Index>(kChunkDoubles / width, 64, g.out_len);
  return g;
}

// Columns of the unfolded input for output rows [t0, t0 + nt).
void im2col(const MatrixXd& padded, const ConvGeometry& g, int stride, Index t0, Index nt,
            MatrixXd& cols) {
  cols.resize(nt, g.ch_in * g.k);
  for (Index c = 0; c < g.ch_in; ++c) {
    const double* base = padded.col(c).data();
    for (Index j = 0; j < g.k; ++j)
      cols.col(c * g.k + j) =
          Map<const VectorXd, 0, InnerStride<>>(base + t0 * stride + j, nt, InnerStride<>(stride));
  }
}


// Narrow layers: register-tiled correlation over the polyphase components of
// the padded input. GEMM is faster once ch_in * ch_out grows.
constexpr Index kDirectMaxProduct = 1024;
constexpr int kTile = 16;
constexpr int kOutBlock = 4;
constexpr int kMaxTaps = 16;

Index round_up(Index n, Index m) { return (n + m - 1) / m * m; }

Index taps(const ConvGeometry& g, int stride) { return (g.k + stride - 1) / stride; }

bool use_direct(const ConvGeometry& g, int stride) {
  return g.ch_in * g.ch_out <= kDirectMaxProduct && taps(g, stride) <= kMaxTaps;
}

using Vec = double __attribute__((vector_size(64)));
constexpr int kLanes = 8;

inline Vec load(const double* p) {
  Vec v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store(double* p, Vec v) { std::memcpy(p, &v, sizeof v); }

inline void add_store(double* p, Vec v) { store(p, load(p) + v); }

// out[a][u] += sum_b sum_q coef[(a * n_in + b) * Q + q] * in[b][u + q] for u < n.
// Rows of `in` must be readable up to round_up(n, kTile) + Q - 1.
template <int Q, int OB>
void corr_rows(const double* const* in, Index n_in, const double* coef, double* const* out, Index n) {
  const Index stride_o = n_in * Q;
  for (Index t = 0; t < n; t += kTile) {
    Vec lo[OB] = {};
    Vec hi[OB] = {};
    for (Index b = 0; b < n_in; ++b) {
      const double* x = in[b] + t;
      const double* cb = coef + b * Q;
      for (int q = 0; q < Q; ++q) {
        const Vec x0 = load(x + q);
        const Vec x1 = load(x + q + kLanes);
        for (int o = 0; o < OB; ++o) {
          const double wv = cb[o * stride_o + q];
          lo[o] += wv * x0;
          hi[o] += wv * x1;
        }
      }
    }
    const Index valid = std::min<Index>(kTile, n - t);
    if (valid == kTile) {
      for (int o = 0; o < OB; ++o) {
        add_store(out[o] + t, lo[o]);
        add_store(out[o] + t + kLanes, hi[o]);
      }
    } else {
      for (int o = 0; o < OB; ++o)
        for (Index i = 0; i < valid; ++i) out[o][t + i] += i < kLanes ? lo[o][i] : hi[o][i - kLanes];
    }
  }
}

template <int Q>
void corr(const double* const* in, Index n_in, const double* coef, double* const* out, Index n_out, Index n) {
  Index a = 0;
  for (; a + kOutBlock <= n_out; a += kOutBlock) corr_rows<Q, kOutBlock>(in, n_in, coef + a * n_in * Q, out + a, n);
  for (; a < n_out; ++a) corr_rows<Q, 1>(in, n_in, coef + a * n_in * Q, out + a, n);
}

// g[b * Q + q] += sum_u dy[u] * in[b][u + q] for u < n.
template <int Q>
void lags(const double* dy, const double* const* in, Index n_in, Index n, double* g) {
  const Index full = n / kLanes * kLanes;
  for (Index b = 0; b < n_in; ++b) {
    const double* x = in[b];
    Vec acc[Q] = {};
    for (Index t = 0; t < full; t += kLanes) {
      const Vec d = load(dy + t);
      for (int q = 0; q < Q; ++q) acc[q] += d * load(x + t + q);
    }
    for (int q = 0; q < Q; ++q) {
      double sum = 0.0;
      for (int i = 0; i < kLanes; ++i) sum += acc[q][i];
      for (Index t = full; t < n; ++t) sum += dy[t] * x[t + q];
      g[b * Q + q] += sum;
    }
  }
}

using CorrFn = void (*)(const double* const*, Index, const double*, double* const*, Index, Index);
using LagFn = void (*)(const double*, const double* const*, Index, Index, double*);

template <std::size_t... Is>
constexpr std::array<CorrFn, sizeof...(Is)> corr_table(std::index_sequence<Is...>) {
  return {&corr<static_cast<int>(Is) + 1>...};
}
template <std::size_t... Is>
constexpr std::array<LagFn, sizeof...(Is)> lag_table(std::index_sequence<Is...>) {
  return {&lags<static_cast<int>(Is) + 1>...};
}
constexpr auto kCorr = corr_table(std::make_index_sequence<kMaxTaps>{});
constexpr auto kLags = lag_table(std::make_index_sequence<kMaxTaps>{});

// Zero-padded polyphase rows: rows[c * stride + r][u] = padded[c][u * stride + r].
struct Polyphase {
  Index row_len = 0;
  std::vector<double> data;
  std::vector<const double*> rows;

  void fill(const double* x, const ConvGeometry& g, int stride, Index padding, Index row_len_) {
    row_len = row_len_;
    data.assign(static_cast<std::size_t>(g.ch_in * stride * row_len), 0.0);
    rows.resize(static_cast<std::size_t>(g.ch_in * stride));
    for (Index c = 0; c < g.ch_in; ++c) {
      for (int r = 0; r < stride; ++r) rows[static_cast<std::size_t>(c * stride + r)] = &data[static_cast<std::size_t>((c * stride + r) * row_len)];
      double* base = &data[static_cast<std::size_t>(c * stride * row_len)];
      for (Index t = 0; t < g.len; ++t) {
        const Index p = t + padding;
        base[(p % stride) * row_len + p / stride] = x[c * g.len + t];
      }
    }
  }
};

// coef[o][c * stride + r][q] = w[o][c][r + q * stride], zero past the kernel.
std::vector<double> forward_coef(const double* w, const ConvGeometry& g, int stride) {
  const Index q_n = taps(g, stride), n_in = g.ch_in * stride;
  std::vector<double> coef(static_cast<std::size_t>(g.ch_out * n_in * q_n), 0.0);
  for (Index o = 0; o < g.ch_out; ++o)
    for (Index c = 0; c < g.ch_in; ++c)
      for (int r = 0; r < stride; ++r)
        for (Index q = 0; q < q_n; ++q) {
          const Index j = r + q * stride;
          if (j < g.k) coef[static_cast<std::size_t>((o * n_in + c * stride + r) * q_n + q)] = w[(o * g.ch_in + c) * g.k + j];
        }
  return coef;
}

void conv_direct_forward(const double* x, const double* coef, double* y, const ConvGeometry& g, int stride,
                         Index padding, Polyphase& phases) {
  const Index q_n = taps(g, stride);
  phases.fill(x, g, stride, padding, round_up(g.out_len, kTile) + q_n);
  std::vector<double*> out(static_cast<std::size_t>(g.ch_out));
  for (Index o = 0; o < g.ch_out; ++o) out[static_cast<std::size_t>(o)] = y + o * g.out_len;
  kCorr[static_cast<std::size_t>(q_n - 1)](phases.rows.data(), g.ch_in * stride, coef, out.data(), g.ch_out,
                                           g.out_len);
}

void conv_direct_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                          const ConvGeometry& g, int stride, Index padding, Polyphase& phases) {
  const Index q_n = taps(g, stride), n_in = g.ch_in * stride;
  const Index plen = (g.padded_len + stride - 1) / stride;
  if (dw) {
    phases.fill(x, g, stride, padding, round_up(g.out_len, kTile) + q_n);
    std::vector<double> acc(static_cast<std::size_t>(n_in * q_n));
    for (Index o = 0; o < g.ch_out; ++o) {
      std::fill(acc.begin(), acc.end(), 0.0);
      kLags[static_cast<std::size_t>(q_n - 1)](dy + o * g.out_len, phases.rows.data(), n_in, g.out_len, acc.data());
      for (Index c = 0; c < g.ch_in; ++c)
        for (int r = 0; r < stride; ++r)
          for (Index q = 0; q < q_n; ++q) {
            const Index j = r + q * stride;
            if (j < g.k) dw[(o * g.ch_in + c) * g.k + j] += acc[static_cast<std::size_t>((c * stride + r) * q_n + q)];
          }
    }
  }
  if (!dx) return;
  // dphase[c * stride + r][u] = sum_o sum_q w[o][c][r + q * stride] * dy[o][u - q], as a forward
  // correlation over dy left-padded by q_n - 1.
  const Index row_len = round_up(plen, kTile) + q_n;
  std::vector<double> dypad(static_cast<std::size_t>(g.ch_out * row_len), 0.0);
  std::vector<const double*> dy_rows(static_cast<std::size_t>(g.ch_out));
  for (Index o = 0; o < g.ch_out; ++o) {
    double* row = &dypad[static_cast<std::size_t>(o * row_len)];
    std::copy(dy + o * g.out_len, dy + (o + 1) * g.out_len, row + q_n - 1);
    dy_rows[static_cast<std::size_t>(o)] = row;
  }
  std::vector<double> coef(static_cast<std::size_t>(n_in * g.ch_out * q_n), 0.0);
  for (Index c = 0; c < g.ch_in; ++c)
    for (int r = 0; r < stride; ++r)
      for (Index o = 0; o < g.ch_out; ++o)
        for (Index qp = 0; qp < q_n; ++qp) {
          const Index j = r + (q_n - 1 - qp) * stride;
          if (j < g.k) coef[static_cast<std::size_t>(((c * stride + r) * g.ch_out + o) * q_n + qp)] = w[(o * g.ch_in + c) * g.k + j];
        }
  std::vector<double> dphase(static_cast<std::size_t>(n_in * plen), 0.0);
  std::vector<double*> out(static_cast<std::size_t>(n_in));
  for (Index a = 0; a < n_in; ++a) out[static_cast<std::size_t>(a)] = &dphase[static_cast<std::size_t>(a * plen)];
  kCorr[static_cast<std::size_t>(q_n - 1)](dy_rows.data(), g.ch_out, coef.data(), out.data(), n_in, plen);
  for (Index c = 0; c < g.ch_in; ++c)
    for (Index t = 0; t < g.len; ++t) {
      const Index p = t + padding;
      dx[c * g.len + t] += dphase[static_cast<std::size_t>((c * stride + p % stride) * plen + p / stride)];
    }
}
}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, Index padding) {
  const ConvGeometry g = conv_geometry(x, w, stride, padding);
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.ch_out))
    throw ShapeError("conv1d: bias must be [ch_out]");
  Tensor y({g.batch, g.ch_out, g.out_len});
  if (use_direct(g, stride)) {
    Polyphase phases;
    const std::vector<double> coef = forward_coef(w.data(), g, stride);
    for (Index b = 0; b < g.batch; ++b) {
      double* yb = y.data() + b * g.ch_out * g.out_len;
      conv_direct_forward(x.data() + b * g.ch_in * g.len, coef.data(), yb, g, stride, padding, phases);
      if (bias)
        for (Index o = 0; o < g.ch_out; ++o)
          Map<VectorXd>(yb + o * g.out_len, g.out_len).array() += (*bias)[o];
    }
    return y;
  }
  const Map<const MatrixXd> wm(w.data(), g.ch_in * g.k, g.ch_out);
  MatrixXd padded = MatrixXd::Zero(g.padded_len, g.ch_in);
  MatrixXd cols;
  for (Index b = 0; b < g.batch; ++b) {
    padded.middleRows(padding, g.len) = Map<const MatrixXd>(x.data() + b * g.ch_in * g.len, g.len, g.ch_in);
    Map<MatrixXd> out(y.data() + b * g.ch_out * g.out_len, g.out_len, g.ch_out);
    for (Index t0 = 0; t0 < g.out_len; t0 += g.chunk) {
      const Index nt = std::min(g.chunk, g.out_len - t0);
      im2col(padded, g, stride, t0, nt, cols);
      out.middleRows(t0, nt).noalias() = cols * wm;
    }
    if (bias) out.rowwise() += Map<const Eigen::RowVectorXd>(bias->data(), g.ch_out);
  }
  return y;
}

void conv1d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, Index padding,
                     Tensor* dx, Tensor* dw, Tensor* dbias) {
  const ConvGeometry g = conv_geometry(x, w, stride, padding);
  require_shape(dy, {g.batch, g.ch_out, g.out_len}, "conv1d backward");
  if (use_direct(g, stride)) {
    Polyphase phases;
    for (Index b = 0; b < g.batch; ++b) {
      const double* dyb = dy.data() + b * g.ch_out * g.out_len;
      conv_direct_backward(x.data() + b * g.ch_in * g.len, w.data(), dyb,
                           dx ? dx->data() + b * g.ch_in * g.len : nullptr, dw ? dw->data() : nullptr, g,
                           stride, padding, phases);
      if (dbias)
        for (Index o = 0; o < g.ch_out; ++o) (*dbias)[o] += Map<const VectorXd>(dyb + o * g.out_len, g.out_len).sum();
    }
    return;
  }
  const Map<const MatrixXd> wm(w.data(), g.ch_in * g.k, g.ch_out);
  MatrixXd padded = MatrixXd::Zero(g.padded_len, g.ch_in);
  MatrixXd dpadded;
  MatrixXd cols, dcols;
  for (Index b = 0; b < g.batch; ++b) {
    const Map<const MatrixXd> grad_out(dy.data() + b * g.ch_out * g.out_len, g.out_len, g.ch_out);
    if (dw) padded.middleRows(padding, g.len) = Map<const MatrixXd>(x.data() + b * g.ch_in * g.len, g.len, g.ch_in);
    if (dx) dpadded = MatrixXd::Zero(g.padded_len, g.ch_in);
    for (Index t0 = 0; t0 < g.out_len; t0 += g.chunk) {
      const Index nt = std::min(g.chunk, g.out_len - t0);
      if (dw) {
        im2col(padded, g, stride, t0, nt, cols);
        Map<MatrixXd>(dw->data(), g.ch_in * g.k, g.ch_out).noalias() +=
            cols.transpose() * grad_out.middleRows(t0, nt);
      }
      if (dx) {
        dcols.noalias() = grad_out.middleRows(t0, nt) * wm.transpose();
        for (Index c = 0; c < g.ch_in; ++c) {
          double* base = dpadded.col(c).data();
          for (Index j = 0; j < g.k; ++j)
            Map<VectorXd, 0, InnerStride<>>(base + t0 * stride + j, nt, InnerStride<>(stride)) +=
                dcols.col(c * g.k + j);
        }
      }
    }
    if (dx)
      Map<MatrixXd>(dx->data() + b * g.ch_in * g.len, g.len, g.ch_in) += dpadded.middleRows(padding, g.len);
    if (dbias) Map<VectorXd>(dbias->data(), g.ch_out) += grad_out.colwise().sum().transpose();
  }
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b) {
  if (x.rank() != 2 || w.rank() != 2 || w.dim(1) != x.dim(1))
    throw ShapeError("linear: incompatible shapes " + shape_string(x.shape()) + " and " +
                     shape_string(w.shape()));
  if (b && (b->rank() != 1 || b->dim(0) != w.dim(0))) throw ShapeError("linear: bias must be [d_out]");
  Tensor y({x.dim(0), w.dim(0)});
  y.matrix(x.dim(0)).noalias() = x.matrix(x.dim(0)) * w.matrix(w.dim(0)).transpose();
  if (b) y.matrix(x.dim(0)).rowwise() += b->values().transpose();
  return y;
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor y(x.shape());
  y.values().array() = x.values().array().max(slope * x.values().array());
  return y;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("global_avg_pool: input must be [batch, ch, len]");
  Tensor y({x.dim(0), x.dim(1)});
  y.values() = x.matrix(x.dim(0) * x.dim(1)).rowwise().mean();
  return y;
}

namespace {

void check_bn(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.rank() != 3) throw ShapeError("batch_norm1d: input must be [batch, ch, len]");
  require_shape(gamma, {x.dim(1)}, "batch_norm1d gamma");
  require_shape(beta, {x.dim(1)}, "batch_norm1d beta");
}

// Applies y = x * scale[c] + shift[c] per channel.
Tensor affine_per_channel(const Tensor& x, const VectorXd& scale, const VectorXd& shift) {
  const Index n = x.dim(0), c = x.dim(1), l = x.dim(2);
  Tensor y(x.shape());
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (b * c + ch) * l;
      y.values().segment(off, l) = (x.values().segment(off, l).array() * scale[ch] + shift[ch]).matrix();
    }
  return y;
}

}  // namespace

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        BatchNormStats* stats) {
  check_bn(x, gamma, beta);
  const Index n = x.dim(0), c = x.dim(1), l = x.dim(2);
  BatchNormStats s;
  s.count = n * l;
  s.mean = VectorXd::Zero(c);
  s.var = VectorXd::Zero(c);
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) s.mean[ch] += x.values().segment((b * c + ch) * l, l).sum();
  s.mean /= static_cast<double>(s.count);
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch)
      s.var[ch] += (x.values().segment((b * c + ch) * l, l).array() - s.mean[ch]).square().sum();
  s.var /= static_cast<double>(s.count);
  s.inv_std = (s.var.array() + eps).rsqrt().matrix();
  const VectorXd scale = gamma.values().cwiseProduct(s.inv_std);
  const VectorXd shift = beta.values() - scale.cwiseProduct(s.mean);
  Tensor y = affine_per_channel(x, scale, shift);
  if (stats) *stats = std::move(s);
  return y;
}

Tensor batch_norm_infer(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        const Tensor& running_mean, const Tensor& running_var, double eps) {
  check_bn(x, gamma, beta);
  require_shape(running_mean, {x.dim(1)}, "batch_norm1d running_mean");
  require_shape(running_var, {x.dim(1)}, "batch_norm1d running_var");
  const VectorXd inv_std = (running_var.values().array() + eps).rsqrt().matrix();
  const VectorXd scale = gamma.values().cwiseProduct(inv_std);
  const VectorXd shift = beta.values() - scale.cwiseProduct(running_mean.values());
  return affine_per_channel(x, scale, shift);
}

}  // namespace cdpam::kernels
