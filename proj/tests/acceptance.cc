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

// Acceptance harness: prints one PASS/FAIL line per criterion.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cdpam/eval.hpp"
#include "cdpam/losses.hpp"
#include "cdpam/model.hpp"
#include "cdpam/parallel.hpp"
#include "cdpam/pipeline.hpp"
#include "cdpam/rng.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace cdpam;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Outcome> outcomes;

void report(int id, bool pass, const std::string& detail) {
  outcomes.push_back({id, pass, detail});
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

void gradient_suite() {
  const auto t0 = Clock::now();
  const auto cases = oracle::gradient_suite(2026);
  int failed = 0;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& c : cases) {
    const auto r = oracle::check_gradient(c, oracle::kFdStep, oracle::kFdTolerance);
    if (r.max_rel_error > worst) worst = r.max_rel_error, worst_name = r.name;
    failed += !r.ok;
  }
  const double secs = seconds_since(t0);
  report(1, failed == 0 && cases.size() >= 100 && secs < 60.0,
         fmt("%zu cases, %d failed, worst rel err %.2e (%s) <= 1e-4, %.1f s < 60 s", cases.size(), failed, worst,
             worst_name.c_str(), secs));
}

void nt_xent_oracle() {
  Rng rng(99);
  double worst = 0.0;
  for (Index n : {2, 4, 8})
    for (int rep = 0; rep < 5; ++rep) {
      const Eigen::MatrixXd zi = Eigen::MatrixXd::NullaryExpr(n, 256, [&] { return rng.normal(); });
      const Eigen::MatrixXd zj = Eigen::MatrixXd::NullaryExpr(n, 256, [&] { return rng.normal(); });
      Tensor ti({n, 256}), tj({n, 256});
      ti.matrix(n) = zi;
      tj.matrix(n) = zj;
      const double got = nt_xent(ContrastiveBatch{ti, tj, kDefaultTemperature});
      worst = std::max(worst, std::abs(got - oracle::nt_xent_bruteforce(zi, zj, kDefaultTemperature)));
    }
  report(2, worst <= 1e-9, fmt("max |nt_xent - brute force| = %.2e <= 1e-9 over N in {2,4,8}, d = 256", worst));
}

void shape_contract() {
  const Model m(ModelConfig{}, 3);
  Rng rng(4);
  Tensor x({1, 1, kCanonicalClipSamples});
  for (Index i = 0; i < x.size(); ++i) x[i] = 0.1 * rng.normal();
  const Tensor feats = m.encoder_features(x);
  const auto emb = m.encode(x);
  const Tensor acoustic({1, m.config().encoder.acoustic_dim}, emb[0].acoustic);
  const Tensor content({1, m.config().encoder.content_dim}, emb[0].content);
  const Index proj_a = m.project(acoustic, Half::kAcoustic).dim(1);
  const Index proj_c = m.project(content, Half::kContent).dim(1);
  const Index extent = feats.dim(2), dim = feats.dim(1);
  const bool ok = extent == 2500 && dim == 1024 && emb[0].acoustic.size() == 512 && emb[0].content.size() == 512 &&
                  proj_a == 256 && proj_c == 256;
  report(3, ok,
         fmt("40000 samples -> extent %ld, embedding %ld = %ld + %ld, projection %ld/%ld", static_cast<long>(extent),
             static_cast<long>(dim), static_cast<long>(emb[0].acoustic.size()),
             static_cast<long>(emb[0].content.size()), static_cast<long>(proj_a), static_cast<long>(proj_c)));
}

void metric_oracles() {
  Rng rng(5);
  double worst = 0.0;
  int trials = 0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + rng.below(49);
    const int levels = t % 2 ? 3 + static_cast<int>(rng.below(5)) : 0;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = levels ? static_cast<double>(rng.below(static_cast<std::uint64_t>(levels))) : rng.normal();
      y[i] = levels ? static_cast<double>(rng.below(static_cast<std::uint64_t>(levels))) : rng.normal();
    }
    const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Index>(n)), yv(y.data(), static_cast<Index>(n));
    if (xv.maxCoeff() == xv.minCoeff() || yv.maxCoeff() == yv.minCoeff()) continue;
    worst = std::max(worst, std::abs(spearman(xv, yv) - oracle::spearman_bruteforce(x, y)));
    ++trials;
  }
  const std::vector<double> a = {0.1, 0.2, 0.3, 0.4};
  const bool ca = common_area(a, a) == 1.0 && common_area({0.0, 0.1}, {0.8, 0.9}) == 0.0;
  const bool mr = margin_rank(0.2, 0.5, 0.1) == 0.0 && margin_rank(0.5, 0.2, 0.1) == 0.5 - 0.2 + 0.1 &&
                  margin_rank(0.3, 0.3, 0.1) == 0.1;
  const bool bc = bce(0.5, 1) == std::log(2.0) && bce(0.5, 0) == std::log(2.0) && bce(0.9, 1) == -std::log(0.9) &&
                  bce(1.0, 1) == -std::log(1.0 - kBceClamp) && bce(0.0, 1) == -std::log(kBceClamp);
  report(10, worst <= 1e-12 && ca && mr && bc,
         fmt("spearman max err %.1e <= 1e-12 over %d trials (ties); common_area %s; margin_rank %s; bce %s", worst,
             trials, ca ? "exact" : "wrong", mr ? "exact" : "wrong", bc ? "exact" : "wrong"));
}

struct PipelineResult {
  double seconds = 0.0;
  std::map<Stage, std::map<std::string, EvalReport>> reports;
};

PipelineResult run_pipeline(RunConfig cfg, const fs::path& out, bool eval_baselines) {
  PipelineResult res;
  cfg.out = out;
  fs::remove_all(out);
  const auto t0 = Clock::now();
  auto log = [&](const char* what) { std::fprintf(stderr, "[%7.1f s] %s\n", seconds_since(t0), what); };
  run_synth_data(cfg);
  log("synth-data done");
  run_pretrain(cfg);
  log("pretrain done");
  run_train_jnd(cfg);
  log("train-jnd done");
  const Model fine = run_finetune(cfg);
  log("finetune done");
  const std::set<std::string> all(kEvalMetrics.begin(), kEvalMetrics.end());
  const RunLayout layout{out};
  auto evaluate = [&](const Model& m) {
    const auto reps = run_eval(m, layout.eval_dir(), cfg, all);
    write_eval_outputs(reps, layout.reports(m.stage()));
    for (const auto& r : reps) res.reports[m.stage()][r.metric] = r;
  };
  evaluate(fine);
  res.seconds = seconds_since(t0);
  log("eval done");
  if (eval_baselines)
    for (Stage s : {Stage::kInit, Stage::kPretrained, Stage::kJnd}) evaluate(load_checkpoint(layout.checkpoint(s)));
  return res;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void pipeline_criteria(const RunConfig& cfg, const fs::path& work, bool determinism) {
  const PipelineResult a = run_pipeline(cfg, work / "run_a", true);
  const auto& fine = a.reports.at(Stage::kFinetuned);
  const double mono = fine.at("monotonicity").value;
  report(4, mono >= 0.8 && a.seconds <= 900.0,
         fmt("monotonicity SC %.4f >= 0.80, pipeline %.0f s <= 900 s", mono, a.seconds));

  const double afc = fine.at("2afc").value;
  report(5, afc >= 0.85, fmt("2AFC %.4f >= 0.85 on %zu triplets", afc, fine.at("2afc").n));

  const double ca_f = fine.at("common_area").value;
  const double ca_p = a.reports.at(Stage::kPretrained).at("common_area").value;
  const double ca_i = a.reports.at(Stage::kInit).at("common_area").value;
  report(6, ca_f <= ca_p && ca_p <= ca_i,
         fmt("common area finetuned %.4f <= pretrained %.4f <= init %.4f", ca_f, ca_p, ca_i));

  const EvalReport& pk = fine.at("precision_at_k");
  double chance = 0.0;
  for (const auto& row : pk.breakdown)
    if (row.value("k", 0) == 5) chance = row.value("chance", 0.0);
  report(7, chance > 0.0 && pk.value >= 3.0 * chance,
         fmt("MP@5 %.4f >= 3 x chance %.4f = %.4f", pk.value, chance, 3.0 * chance));

  const EvalReport& rb = fine.at("robustness");
  report(8, rb.value >= 0.9, fmt("both robustness checks hold in %.3f of %zu cases >= 0.90", rb.value, rb.n));

  if (!determinism) return;
  run_pipeline(cfg, work / "run_b", false);
  int compared = 0, differing = 0;
  std::string first_diff;
  for (const char* sub : {"checkpoints", "reports/finetuned"})
    for (const auto& e : fs::directory_iterator(work / "run_a" / sub)) {
      const fs::path other = work / "run_b" / sub / e.path().filename();
      ++compared;
      if (!fs::exists(other) || slurp(e.path()) != slurp(other)) {
        ++differing;
        if (first_diff.empty()) first_diff = (fs::path(sub) / e.path().filename()).string();
      }
    }
  report(9, compared > 0 && differing == 0,
         fmt("%d files compared across two runs, %d differ%s%s", compared, differing, first_diff.empty() ? "" : ": ",
             first_diff.c_str()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cdpam acceptance"};
  std::string work = "acceptance_run";
  std::string config = CDPAM_DESK_CONFIG;
  bool skip_pipeline = false, skip_determinism = false, strict = false;
  app.add_option("--work-dir", work, "Scratch directory for pipeline runs");
  app.add_option("--config", config, "Desk run config")->check(CLI::ExistingFile);
  app.add_flag("--skip-pipeline", skip_pipeline, "Only run criteria 1-3 and 10");
  app.add_flag("--skip-determinism", skip_determinism, "Skip the second pipeline run");
  app.add_flag("--strict", strict, "Exit non-zero when any criterion fails");
  CLI11_PARSE(app, argc, argv);

  tune_allocator();
  try {
    gradient_suite();
    nt_xent_oracle();
    shape_contract();
    if (!skip_pipeline) {
      fs::create_directories(work);
      pipeline_criteria(load_run_config(config), work, !skip_determinism);
    }
    metric_oracles();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance harness error: %s\n", e.what());
    return 3;
  }

  std::sort(outcomes.begin(), outcomes.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
  int failed = 0;
  std::printf("\nsummary\n");
  for (const auto& o : outcomes) {
    std::printf("criterion %d: %s\n", o.id, o.pass ? "PASS" : "FAIL");
    failed += !o.pass;
  }
  std::printf("%zu evaluated, %d failed\n", outcomes.size(), failed);
  return strict && failed ? 1 : 0;
}
