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

#include "cdpam/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "cdpam/error.hpp"

namespace cdpam {
namespace {

using nlohmann::json;

Eigen::VectorXd to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << text;
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<double> histogram(const std::vector<double>& xs, double lo, double hi, int bins) {
  std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
  const double width = (hi - lo) / bins;
  for (double x : xs) {
    int b = width > 0.0 ? static_cast<int>((x - lo) / width) : 0;
    b = std::clamp(b, 0, bins - 1);
    h[static_cast<std::size_t>(b)] += 1.0;
  }
  for (double& v : h) v /= static_cast<double>(xs.size());
  return h;
}

}  // namespace

Eigen::VectorXd average_ranks(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return x[a] < x[b]; });
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n;) {
    Eigen::Index j = i + 1;
    while (j < n && x[order[j]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (Eigen::Index k = i; k < j; ++k) r[order[k]] = avg;
    i = j;
  }
  return r;
}

double spearman(const Eigen::Ref<const Eigen::VectorXd>& xs, const Eigen::Ref<const Eigen::VectorXd>& ys) {
  if (xs.size() != ys.size()) throw PreconditionError("spearman: length mismatch");
  if (xs.size() < 2) throw PreconditionError("spearman: need at least 2 samples");
  if (!xs.allFinite() || !ys.allFinite()) throw PreconditionError("spearman: non-finite input");
  const Eigen::VectorXd rx = average_ranks(xs), ry = average_ranks(ys);
  const Eigen::VectorXd cx = rx.array() - rx.mean();
  const Eigen::VectorXd cy = ry.array() - ry.mean();
  const double sx = cx.squaredNorm(), sy = cy.squaredNorm();
  if (sx == 0.0 || sy == 0.0) throw DegenerateInputError("spearman: constant input");
  return std::clamp(cx.dot(cy) / std::sqrt(sx * sy), -1.0, 1.0);
}

MosResult mos_correlation(const std::vector<double>& distances, const std::vector<double>& ratings,
                          const std::vector<int>& speakers, const std::vector<int>& conditions) {
  const std::size_t n = distances.size();
  if (ratings.size() != n || speakers.size() != n || conditions.size() != n)
    throw PreconditionError("mos_correlation: length mismatch");
  if (n == 0) throw DataError("mos_correlation: no items");
  std::map<std::pair<int, int>, MosCell> cells;
  std::set<int> spk, cond;
  for (std::size_t i = 0; i < n; ++i) {
    MosCell& c = cells[{speakers[i], conditions[i]}];
    c.speaker = speakers[i];
    c.condition = conditions[i];
    c.mean_distance += distances[i];
    c.mean_rating += ratings[i];
    ++c.count;
    spk.insert(speakers[i]);
    cond.insert(conditions[i]);
  }
  for (int s : spk)
    for (int c : cond)
      if (!cells.count({s, c}))
        throw DataError("mos_correlation: empty cell (speaker " + std::to_string(s) + ", condition " +
                        std::to_string(c) + ")");
  MosResult out;
  Eigen::VectorXd neg_d(static_cast<Eigen::Index>(cells.size())), r(neg_d.size());
  Eigen::Index k = 0;
  for (auto& [key, c] : cells) {
    c.mean_distance /= c.count;
    c.mean_rating /= c.count;
    neg_d[k] = -c.mean_distance;
    r[k] = c.mean_rating;
    ++k;
    out.cells.push_back(c);
  }
  out.rho = spearman(neg_d, r);
  return out;
}

double two_afc(const std::vector<double>& d_a, const std::vector<double>& d_b, const std::vector<int>& preferred) {
  if (d_a.size() != d_b.size() || d_a.size() != preferred.size())
    throw PreconditionError("two_afc: length mismatch");
  if (d_a.empty()) throw PreconditionError("two_afc: no triplets");
  double score = 0.0;
  for (std::size_t i = 0; i < d_a.size(); ++i) {
    if (d_a[i] == d_b[i])
      score += 0.5;
    else
      score += (d_a[i] < d_b[i]) == (preferred[i] == 0) ? 1.0 : 0.0;
  }
  return score / static_cast<double>(d_a.size());
}

double common_area(const std::vector<double>& group_same, const std::vector<double>& group_diff, int n_bins) {
  if (group_same.empty() || group_diff.empty()) throw PreconditionError("common_area: empty group");
  if (n_bins < 1) throw PreconditionError("common_area: n_bins must be >= 1");
  double lo = group_same[0], hi = group_same[0];
  for (const auto* g : {&group_same, &group_diff})
    for (double x : *g) {
      if (!std::isfinite(x)) throw PreconditionError("common_area: non-finite distance");
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  const auto p = histogram(group_same, lo, hi, n_bins);
  const auto q = histogram(group_diff, lo, hi, n_bins);
  double overlap = 0.0;
  for (int b = 0; b < n_bins; ++b) overlap += std::min(p[static_cast<std::size_t>(b)], q[static_cast<std::size_t>(b)]);
  return std::clamp(overlap, 0.0, 1.0);
}

double monotonicity(const std::vector<double>& distances, const std::vector<double>& levels) {
  return spearman(to_vec(distances), to_vec(levels));
}

double precision_at_k(const Eigen::Ref<const Eigen::MatrixXd>& embeddings, const std::vector<int>& labels, int k) {
  const Eigen::Index n = embeddings.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw PreconditionError("precision_at_k: length mismatch");
  if (k < 1 || n < k + 1) throw DataError("precision_at_k: need at least k + 1 items");
  std::map<int, int> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw DataError("precision_at_k: need at least 2 classes");
  for (const auto& [l, c] : sizes)
    if (c < 2) throw DataError("precision_at_k: class " + std::to_string(l) + " has fewer than 2 members");

  const Eigen::VectorXd norms = embeddings.rowwise().norm();
  if ((norms.array() == 0.0).any()) throw DegenerateInputError("precision_at_k: zero embedding");
  const Eigen::MatrixXd u = norms.cwiseInverse().asDiagonal() * embeddings;
  const Eigen::MatrixXd dist = 1.0 - (u * u.transpose()).array();

  double total = 0.0;
  std::vector<Eigen::Index> order;
  for (Eigen::Index q = 0; q < n; ++q) {
    order.clear();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != q) order.push_back(j);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return dist(q, a) < dist(q, b) || (dist(q, a) == dist(q, b) && a < b);
    });
    int hits = 0;
    for (int i = 0; i < k; ++i) hits += labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] ==
                                        labels[static_cast<std::size_t>(q)];
    total += static_cast<double>(hits) / k;
  }
  return total / static_cast<double>(n);
}

void to_json(json& j, const EvalReport& r) {
  j = {{"metric", r.metric}, {"value", r.value}, {"n", r.n}, {"config", r.config}, {"breakdown", r.breakdown}};
}

void from_json(const json& j, EvalReport& r) {
  r.metric = j.at("metric").get<std::string>();
  r.value = j.at("value").get<double>();
  r.n = j.at("n").get<std::size_t>();
  r.config = j.value("config", json::object());
  r.breakdown = j.value("breakdown", json::array());
}

void write_reports(const std::vector<EvalReport>& reports, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", json(reports).dump(2) + "\n");
  std::string csv = "metric,value,n\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%zu\n", r.metric.c_str(), r.value, r.n);
    csv += buf;
  }
  write_text(dir / "report.csv", csv);
}

void write_histogram_svg(const std::vector<double>& group_same, const std::vector<double>& group_diff, int n_bins,
                         const std::filesystem::path& path) {
  if (group_same.empty() || group_diff.empty()) throw PreconditionError("histogram: empty group");
  double lo = group_same[0], hi = group_same[0];
  for (const auto* g : {&group_same, &group_diff})
    for (double x : *g) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  const auto p = histogram(group_same, lo, hi, n_bins);
  const auto q = histogram(group_diff, lo, hi, n_bins);
  const double top = std::max(*std::max_element(p.begin(), p.end()), *std::max_element(q.begin(), q.end()));
  constexpr double W = 600, H = 300, pad = 30;
  const double bw = (W - 2 * pad) / n_bins;
  std::string svg;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" viewBox=\"0 0 %g %g\">\n", W,
                H, W, H);
  svg += buf;
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  auto bars = [&](const std::vector<double>& h, const char* color) {
    for (int b = 0; b < n_bins; ++b) {
      const double hh = top > 0 ? (H - 2 * pad) * h[static_cast<std::size_t>(b)] / top : 0.0;
      std::snprintf(buf, sizeof(buf),
                    "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\" fill-opacity=\"0.5\"/>\n",
                    pad + b * bw, H - pad - hh, bw, hh, color);
      svg += buf;
    }
  };
  bars(p, "steelblue");
  bars(q, "darkorange");
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%g\" y=\"%g\" font-size=\"12\">same perturbation (blue) vs different (orange), "
                "distance %.4g .. %.4g</text>\n",
                pad, pad - 10, lo, hi);
  svg += buf;
  svg += "</svg>\n";
  write_text(path, svg);
}

}  // namespace cdpam
