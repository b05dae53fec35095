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
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cdpam/adam.hpp"
#include "cdpam/datagen.hpp"
#include "cdpam/model.hpp"
#include "json.hpp"

namespace cdpam {

enum class TrainStage { kPretrain, kJnd, kFinetune };
std::string train_stage_name(TrainStage s);

struct StageEpochs {
  int pretrain = 250;
  int jnd = 250;
  int finetune = 100;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr = 1e-4;
  StageEpochs epochs;
  double tau = 0.5;
  double margin = 0.1;
  std::uint64_t seed = 0;
  bool augment = true;
  bool encoder_frozen_in_jnd = true;
  // With a frozen encoder, each clip is embedded under this many seeded
  // augmentation variants up front and every epoch draws one of them.
  // 0 re-augments and re-embeds every clip every epoch.
  int augment_pool = 0;
  std::vector<Family> families = {kAllFamilies.begin(), kAllFamilies.end()};
  PerturbRanges ranges;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

inline constexpr double kShiftSeconds = 0.25;
inline constexpr double kGainMinDb = -20.0;
inline constexpr double kGainMaxDb = 0.0;

// 0.25 s of leading or trailing silence (p = 0.5 each) trimmed back to the
// input length, then a uniform gain in [-20, 0] dB.
Waveform augment_online(const Waveform& w, std::uint64_t seed, bool enabled = true);

struct EpochLog {
  TrainStage stage = TrainStage::kPretrain;
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double accuracy = -1.0;  // stage-specific; negative when not tracked
  double wall_ms = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Clean clips and rendered judgment audio, addressed by clip id.
class ClipStore {
 public:
  void add(const std::string& id, Waveform w);
  const Waveform& at(const std::string& id) const;
  bool contains(const std::string& id) const { return clips_.count(id) > 0; }
  std::size_t size() const { return clips_.size(); }

  // Reads every clip a manifest references, paths relative to `root`.
  void load_records(const std::vector<JudgmentRecord>& records, const std::filesystem::path& root,
                    int sample_rate_hz, Index clip_samples);

 private:
  std::map<std::string, Waveform> clips_;
};

std::vector<EpochLog> pretrain_contrastive(const TrainConfig& cfg, const std::vector<Utterance>& corpus,
                                           Model& model, const EpochCallback& on_epoch = {});

std::vector<EpochLog> train_jnd(const TrainConfig& cfg, const std::vector<JudgmentRecord>& records,
                                const ClipStore& clips, Model& model, const EpochCallback& on_epoch = {});

std::vector<EpochLog> finetune_triplet(const TrainConfig& cfg, const std::vector<JudgmentRecord>& records,
                                       const ClipStore& clips, Model& model,
                                       const EpochCallback& on_epoch = {});

// Fraction of JND records whose judge() output falls on the labelled side of
// 0.5, and of triplets whose preferred clip is strictly closer.
double jnd_accuracy(const Model& model, const std::vector<JudgmentRecord>& records, const ClipStore& clips);
double triplet_accuracy(const Model& model, const std::vector<JudgmentRecord>& records,
                        const ClipStore& clips);

// CSV with columns epoch,stage,loss,wall_ms.
void write_progress_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path);

}  // namespace cdpam
