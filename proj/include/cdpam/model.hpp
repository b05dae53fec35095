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
#include <span>
#include <string>
#include <vector>

#include "cdpam/audio.hpp"
#include "cdpam/autograd.hpp"
#include "json.hpp"

namespace cdpam {

struct EncoderConfig {
  int n_layers = 16;
  Index kernel = 15;
  std::vector<int> stride2_layers = {4, 8, 12, 16};  // 1-based layer indices
  std::vector<Index> block_channels = {128, 256, 512, 1024};
  Index embedding_dim = 1024;
  Index acoustic_dim = 512;
  Index content_dim = 512;

  void validate() const;
  // Output channels of a 1-based layer.
  Index channels(int layer) const;
  int stride(int layer) const;
  // Product of all strides; input lengths must be a multiple of it.
  Index downsampling() const;
};

struct ModelConfig {
  EncoderConfig encoder;
  // Projection head widths after the 512-d input: hidden, output.
  std::vector<Index> projection = {512, 256};
  // Loss-net hidden widths after the acoustic input.
  std::vector<Index> lossnet = {512, 256, 128, 64};
  Index classifier_hidden = 16;
  double leaky_slope = 0.2;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  void validate() const;
  // Reduced widths for single-core desk runs; same depth and topology.
  static ModelConfig desk();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

enum class Stage { kInit, kPretrained, kJnd, kFinetuned };
std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);

enum class Half { kAcoustic, kContent };

struct Embedding {
  Eigen::VectorXd acoustic;
  Eigen::VectorXd content;
};

// Encoder, the two projection heads, the loss-net and the judgment classifier,
// plus the metadata a checkpoint carries.
class Model {
 public:
  Model() = default;
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  Stage stage() const { return stage_; }
  void set_stage(Stage s) { stage_ = s; }
  std::uint64_t seed() const { return seed_; }
  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  // ---- inference (no graph, running batch-norm statistics) ----

  // [batch, 1, len] -> pre-pool features [batch, embedding_dim, len / 16].
  Tensor encoder_features(const Tensor& x) const;
  // [batch, 1, len] -> [batch, embedding_dim]
  Tensor embed(const Tensor& x) const;
  std::vector<Embedding> encode(const Tensor& x) const;
  // Embeddings of many clips, batched and spread over workers. -> [n, embedding_dim]
  Tensor embed_waveforms(std::span<const Waveform> clips) const;

  // [batch, 512] -> [batch, 256]
  Tensor project(const Tensor& half, Half which) const;
  // Loss-net hidden activations of acoustic vectors [batch, acoustic_dim].
  std::vector<Tensor> lossnet_features(const Tensor& acoustic) const;
  // Per-row distance between two acoustic batches. -> [batch]
  Eigen::VectorXd distance_from_acoustic(const Tensor& ref, const Tensor& per) const;
  double distance(const Waveform& ref, const Waveform& per) const;
  double judge(double d) const;

  // ---- recorded ----

  Var embed(Graph& g, Var x, bool training);
  Var acoustic(Var embedding) const;
  Var content(Var embedding) const;
  Var project(Graph& g, Var half, Half which);
  Var distance(Graph& g, Var acoustic_ref, Var acoustic_per);  // -> [batch]
  Var judge(Graph& g, Var d);                                  // [batch] -> [batch]

  static Tensor batch_from(std::span<const Waveform> clips);

 private:
  friend Model load_checkpoint(const std::filesystem::path& path);

  // Zero-filled when randomize is false (shape template for loading).
  void init_parameters(bool randomize);
  std::string conv_name(int layer) const;

  ModelConfig config_;
  ParameterSet params_;
  Stage stage_ = Stage::kInit;
  std::uint64_t seed_ = 0;
  nlohmann::json metadata_ = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "CDPM", u32 version, u64 header length, JSON header (config, stage, seed,
// metadata, tensor directory), then little-endian f64 payloads in directory
// order. Written to a temporary file and renamed into place.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace cdpam
