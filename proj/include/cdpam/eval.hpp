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

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace cdpam {

// 1-based ranks; tied values share the mean of their positions.
Eigen::VectorXd average_ranks(const Eigen::Ref<const Eigen::VectorXd>& x);

// Pearson correlation of average ranks. Throws DegenerateInputError when
// either side is constant.
double spearman(const Eigen::Ref<const Eigen::VectorXd>& xs, const Eigen::Ref<const Eigen::VectorXd>& ys);

struct MosCell {
  int speaker = 0;
  int condition = 0;
  double mean_distance = 0.0;
  double mean_rating = 0.0;
  int count = 0;
};

struct MosResult {
  double rho = 0.0;
  std::vector<MosCell> cells;
};

// Averages within each (speaker, condition) cell present in the inputs, then
// Spearman of -distance against rating over cells. Every speaker must cover
// every condition.
MosResult mos_correlation(const std::vector<double>& distances, const std::vector<double>& ratings,
                          const std::vector<int>& speakers, const std::vector<int>& conditions);

// Fraction of triplets where the closer clip is the preferred one;
// preferred[i] is 0 for A and 1 for B; exact ties score 0.5.
double two_afc(const std::vector<double>& d_a, const std::vector<double>& d_b, const std::vector<int>& preferred);

inline constexpr int kCommonAreaBins = 50;

// Overlap of the two unit-mass histograms over the pooled min-max range.
double common_area(const std::vector<double>& group_same, const std::vector<double>& group_diff,
                   int n_bins = kCommonAreaBins);

// Spearman of distance against level, pooled over all items of one series.
double monotonicity(const std::vector<double>& distances, const std::vector<double>& levels);

// Mean precision of the top-k cosine neighbours; rows of `embeddings` are
// items. Ties in distance go to the lower index.
double precision_at_k(const Eigen::Ref<const Eigen::MatrixXd>& embeddings, const std::vector<int>& labels, int k);

struct EvalReport {
  std::string metric;
  double value = 0.0;
  std::size_t n = 0;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json breakdown = nlohmann::json::array();  // one object per row
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

// report.json (array) and report.csv (metric,value,n) in `dir`.
void write_reports(const std::vector<EvalReport>& reports, const std::filesystem::path& dir);

// Overlaid histograms of the two common-area groups.
void write_histogram_svg(const std::vector<double>& group_same, const std::vector<double>& group_diff,
                         int n_bins, const std::filesystem::path& path);

}  // namespace cdpam
