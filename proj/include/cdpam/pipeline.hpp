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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cdpam/datagen.hpp"
#include "cdpam/eval.hpp"
#include "cdpam/model.hpp"
#include "cdpam/trainer.hpp"
#include "json.hpp"

namespace cdpam {

struct DataConfig {
  int n_utterances = 128;
  int n_speakers = 8;
  int n_jnd = 2000;
  int n_triplets = 1000;
  std::string corpus_dir;  // optional directory of user WAVs replacing the synthetic corpus
  OracleConfig oracle;
};

struct EvalConfig {
  int n_utterances = 200;
  int n_speakers = 8;
  int n_triplets = 200;
  double triplet_min_gap = 0.2;
  int mono_items = 8;
  int mono_levels = 6;
  int common_pairs = 100;
  int retrieval_groups = 10;
  int retrieval_items = 20;
  int retrieval_k = 5;
  int mos_conditions = 8;
  int mos_utts_per_cell = 2;
  double mos_rating_sigma = 0.25;
  int robust_cases = 200;
  double robust_snr_db = 10.0;
  double robust_gain_db = -12.0;
  int bins = kCommonAreaBins;
};

struct RunConfig {
  std::uint64_t seed = 1234;
  std::filesystem::path out = "run";
  CorpusSpec audio;
  std::vector<Family> families = {kAllFamilies.begin(), kAllFamilies.end()};
  ModelConfig model;
  DataConfig data;
  EvalConfig eval;
  TrainConfig train;

  // Copies the shared family list and seed into the nested configs.
  void resolve();
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

inline const std::vector<std::string> kEvalMetrics = {"2afc", "common_area", "monotonicity", "precision_at_k",
                                                      "mos", "robustness"};

// Paths under the run directory.
struct RunLayout {
  std::filesystem::path root;
  std::filesystem::path corpus_dir() const { return root / "corpus"; }
  std::filesystem::path corpus_index() const { return root / "corpus.jsonl"; }
  std::filesystem::path jnd_manifest() const { return root / "jnd.jsonl"; }
  std::filesystem::path triplet_manifest() const { return root / "triplets.jsonl"; }
  std::filesystem::path eval_dir() const { return root / "eval"; }
  std::filesystem::path checkpoint(Stage s) const { return root / "checkpoints" / (stage_name(s) + ".ckpt"); }
  std::filesystem::path log(TrainStage s) const { return root / "logs" / (train_stage_name(s) + ".csv"); }
  std::filesystem::path reports(Stage s) const { return root / "reports" / stage_name(s); }
  std::filesystem::path manifest(const std::string& command) const {
    return root / "manifests" / (command + ".json");
  }
};

// Writes {command, config} for a subcommand.
void write_run_manifest(const RunConfig& cfg, const std::string& command);

// corpus/, corpus.jsonl, jnd.jsonl (+ jnd/), triplets.jsonl (+ triplets/), eval/.
void run_synth_data(const RunConfig& cfg);

std::vector<Utterance> load_corpus(const RunConfig& cfg);

// Each stage reads the previous stage's checkpoint (pretrain starts from a
// fresh model and also saves it as the init checkpoint).
Model run_pretrain(const RunConfig& cfg, const EpochCallback& on_epoch = {});
Model run_train_jnd(const RunConfig& cfg, const EpochCallback& on_epoch = {});
Model run_finetune(const RunConfig& cfg, const EpochCallback& on_epoch = {});

// Embeds clips by relative path under a root, caching per path.
class EmbeddingCache {
 public:
  EmbeddingCache(const Model& model, std::filesystem::path root, int sample_rate_hz, Index clip_samples)
      : model_(model), root_(std::move(root)), rate_(sample_rate_hz), samples_(clip_samples) {}
  // Loads and embeds every path not yet cached.
  void prepare(const std::vector<std::string>& paths);
  const Eigen::VectorXd& embedding(const std::string& path) const;
  Eigen::VectorXd acoustic(const std::string& path) const;
  // Distances for (ref, per) path pairs; prepares missing paths first.
  std::vector<double> distances(const std::vector<std::string>& refs, const std::vector<std::string>& pers);

 private:
  const Model& model_;
  std::filesystem::path root_;
  int rate_;
  Index samples_;
  std::map<std::string, Eigen::VectorXd> table_;
};

// Runs the requested metrics over an eval split directory.
std::vector<EvalReport> run_eval(const Model& model, const std::filesystem::path& eval_dir, const RunConfig& cfg,
                                 const std::set<std::string>& metrics);

// Reports plus common_area.svg in `dir`.
void write_eval_outputs(const std::vector<EvalReport>& reports, const std::filesystem::path& dir);

}  // namespace cdpam
