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

#include "cdpam/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cdpam/kernels.hpp"
#include "cdpam/parallel.hpp"
#include "cdpam/rng.hpp"

namespace cdpam {

// ---- configuration ----

void EncoderConfig::validate() const {
  if (n_layers < 1 || block_channels.empty() || n_layers % static_cast<int>(block_channels.size()) != 0)
    throw PreconditionError("encoder config: layer count must split evenly into blocks");
  if (kernel < 1 || kernel % 2 == 0) throw PreconditionError("encoder config: kernel must be odd");
  if (stride2_layers.size() != 4) throw PreconditionError("encoder config: exactly 4 stride-2 layers required");
  for (int l : stride2_layers)
    if (l < 1 || l > n_layers) throw PreconditionError("encoder config: stride-2 layer out of range");
  if (block_channels.back() != embedding_dim)
    throw PreconditionError("encoder config: final channel count must equal embedding_dim");
  if (acoustic_dim + content_dim != embedding_dim || acoustic_dim < 1 || content_dim < 1)
    throw PreconditionError("encoder config: acoustic_dim + content_dim must equal embedding_dim");
}

Index EncoderConfig::channels(int layer) const {
  const int per_block = n_layers / static_cast<int>(block_channels.size());
  return block_channels.at(static_cast<std::size_t>((layer - 1) / per_block));
}

int EncoderConfig::stride(int layer) const {
  return std::find(stride2_layers.begin(), stride2_layers.end(), layer) != stride2_layers.end() ? 2 : 1;
}

Index EncoderConfig::downsampling() const { return Index{1} << stride2_layers.size(); }

void ModelConfig::validate() const {
  encoder.validate();
  if (projection.size() != 2) throw PreconditionError("model config: projection head has two layers");
  if (lossnet.size() != 4) throw PreconditionError("model config: loss-net has four layers");
  if (classifier_hidden < 1) throw PreconditionError("model config: classifier_hidden must be positive");
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.encoder.block_channels = {4, 8, 16, 32};
  c.encoder.embedding_dim = 32;
  c.encoder.acoustic_dim = 16;
  c.encoder.content_dim = 16;
  c.projection = {16, 8};
  c.lossnet = {16, 16, 8, 8};
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder",
        {{"n_layers", c.encoder.n_layers},
         {"kernel", c.encoder.kernel},
         {"stride2_layers", c.encoder.stride2_layers},
         {"block_channels", c.encoder.block_channels},
         {"embedding_dim", c.encoder.embedding_dim},
         {"acoustic_dim", c.encoder.acoustic_dim},
         {"content_dim", c.encoder.content_dim}}},
       {"projection", c.projection},
       {"lossnet", c.lossnet},
       {"classifier_hidden", c.classifier_hidden},
       {"leaky_slope", c.leaky_slope},
       {"bn_momentum", c.bn_momentum},
       {"bn_eps", c.bn_eps}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  if (j.contains("preset") && j.at("preset").get<std::string>() == "desk") c = ModelConfig::desk();
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    if (e.contains("n_layers")) c.encoder.n_layers = e.at("n_layers").get<int>();
    if (e.contains("kernel")) c.encoder.kernel = e.at("kernel").get<Index>();
    if (e.contains("stride2_layers")) c.encoder.stride2_layers = e.at("stride2_layers").get<std::vector<int>>();
    if (e.contains("block_channels")) c.encoder.block_channels = e.at("block_channels").get<std::vector<Index>>();
    if (e.contains("embedding_dim")) c.encoder.embedding_dim = e.at("embedding_dim").get<Index>();
    if (e.contains("acoustic_dim")) c.encoder.acoustic_dim = e.at("acoustic_dim").get<Index>();
    if (e.contains("content_dim")) c.encoder.content_dim = e.at("content_dim").get<Index>();
  }
  if (j.contains("projection")) c.projection = j.at("projection").get<std::vector<Index>>();
  if (j.contains("lossnet")) c.lossnet = j.at("lossnet").get<std::vector<Index>>();
  if (j.contains("classifier_hidden")) c.classifier_hidden = j.at("classifier_hidden").get<Index>();
  if (j.contains("leaky_slope")) c.leaky_slope = j.at("leaky_slope").get<double>();
  if (j.contains("bn_momentum")) c.bn_momentum = j.at("bn_momentum").get<double>();
  if (j.contains("bn_eps")) c.bn_eps = j.at("bn_eps").get<double>();
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kInit: return "init";
    case Stage::kPretrained: return "pretrained";
    case Stage::kJnd: return "jnd";
    case Stage::kFinetuned: return "finetuned";
  }
  return "unknown";
}

Stage stage_from_name(const std::string& name) {
  for (Stage s : {Stage::kInit, Stage::kPretrained, Stage::kJnd, Stage::kFinetuned})
    if (stage_name(s) == name) return s;
  throw FormatError("unknown stage tag: " + name);
}

// ---- model ----

namespace {

const char* half_name(Half h) { return h == Half::kAcoustic ? "acoustic" : "content"; }

std::string fc(const std::string& prefix, int i) { return prefix + ".fc" + std::to_string(i); }

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
  config_.validate();
  init_parameters(true);
}

std::string Model::conv_name(int layer) const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "encoder.layer%02d", layer);
  return buf;
}

void Model::init_parameters(bool randomize) {
  Rng rng(derive_seed(seed_, {0x1417}));
  const double gain = std::sqrt(2.0 / (1.0 + config_.leaky_slope * config_.leaky_slope));
  auto normal = [&](Shape shape, double fan_in) {
    Tensor t(std::move(shape));
    if (!randomize) return t;
    const double sd = gain / std::sqrt(fan_in);
    for (Index i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, sd);
    return t;
  };
  auto add_fc = [&](const std::string& name, Index in, Index out) {
    params_.add(name + ".weight", normal({out, in}, static_cast<double>(in)));
    params_.add(name + ".bias", Tensor::zeros({out}));
  };
  const EncoderConfig& e = config_.encoder;
  Index in = 1;
  for (int l = 1; l <= e.n_layers; ++l) {
    const Index out = e.channels(l);
    const std::string n = conv_name(l);
    params_.add(n + ".weight", normal({out, in, e.kernel}, static_cast<double>(in * e.kernel)));
    params_.add(n + ".bn.gamma", Tensor::constant({out}, 1.0));
    params_.add(n + ".bn.beta", Tensor::zeros({out}));
    params_.add(n + ".bn.running_mean", Tensor::zeros({out}), false);
    params_.add(n + ".bn.running_var", Tensor::constant({out}, 1.0), false);
    in = out;
  }
  for (Half h : {Half::kAcoustic, Half::kContent}) {
    const Index dim = h == Half::kAcoustic ? e.acoustic_dim : e.content_dim;
    const std::string p = std::string("projection.") + half_name(h);
    add_fc(fc(p, 1), dim, config_.projection[0]);
    add_fc(fc(p, 2), config_.projection[0], config_.projection[1]);
  }
  Index width = e.acoustic_dim;
  for (int i = 0; i < 4; ++i) {
    add_fc(fc("lossnet", i + 1), width, config_.lossnet[static_cast<std::size_t>(i)]);
    width = config_.lossnet[static_cast<std::size_t>(i)];
  }
  add_fc("classifier.fc1", 1, config_.classifier_hidden);
  add_fc("classifier.fc2", config_.classifier_hidden, 1);
}

Tensor Model::encoder_features(const Tensor& x) const {
  const EncoderConfig& e = config_.encoder;
  if (x.rank() != 3 || x.dim(1) != 1) throw ShapeError("encode: input must be [batch, 1, len]");
  if (x.dim(2) % e.downsampling() != 0)
    throw ShapeError("encode: length " + std::to_string(x.dim(2)) + " not divisible by " +
                     std::to_string(e.downsampling()));
  Tensor h = x;
  for (int l = 1; l <= e.n_layers; ++l) {
    const std::string n = conv_name(l);
    h = kernels::conv1d(h, params_.at(n + ".weight").value, nullptr, e.stride(l), (e.kernel - 1) / 2);
    h = kernels::batch_norm_infer(h, params_.at(n + ".bn.gamma").value, params_.at(n + ".bn.beta").value,
                                  params_.at(n + ".bn.running_mean").value,
                                  params_.at(n + ".bn.running_var").value, config_.bn_eps);
    h = kernels::leaky_relu(h, config_.leaky_slope);
  }
  if (!h.all_finite()) throw NumericError("encode: non-finite features");
  return h;
}

Tensor Model::embed(const Tensor& x) const { return kernels::global_avg_pool(encoder_features(x)); }

std::vector<Embedding> Model::encode(const Tensor& x) const {
  const Tensor emb = embed(x);
  const Index n = emb.dim(0), a = config_.encoder.acoustic_dim;
  std::vector<Embedding> out(static_cast<std::size_t>(n));
  const auto m = emb.matrix(n);
  for (Index i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)].acoustic = m.row(i).head(a).transpose();
    out[static_cast<std::size_t>(i)].content = m.row(i).tail(config_.encoder.content_dim).transpose();
  }
  return out;
}

Tensor Model::batch_from(std::span<const Waveform> clips) {
  if (clips.empty()) throw PreconditionError("batch: no clips");
  const Index len = clips.front().size();
  Tensor x({static_cast<Index>(clips.size()), 1, len});
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].size() != len) throw ShapeError("batch: clips differ in length");
    x.values().segment(static_cast<Index>(i) * len, len) = clips[i].samples;
  }
  return x;
}

Tensor Model::embed_waveforms(std::span<const Waveform> clips) const {
  const auto n = static_cast<Index>(clips.size());
  const Index dim = config_.encoder.embedding_dim;
  Tensor out({std::max<Index>(n, 1), dim});
  if (n == 0) return Tensor();
  constexpr Index kChunk = 8;
  const auto chunks = static_cast<std::size_t>((n + kChunk - 1) / kChunk);
  parallel_for(chunks, [&](std::size_t c) {
    const Index begin = static_cast<Index>(c) * kChunk;
    const Index count = std::min(kChunk, n - begin);
    const Tensor emb = embed(batch_from(clips.subspan(static_cast<std::size_t>(begin), static_cast<std::size_t>(count))));
    out.values().segment(begin * dim, count * dim) = emb.values();
  });
  return out;
}

Tensor Model::project(const Tensor& half, Half which) const {
  const std::string p = std::string("projection.") + half_name(which);
  Tensor h = kernels::linear(half, params_.at(fc(p, 1) + ".weight").value, &params_.at(fc(p, 1) + ".bias").value);
  h = kernels::leaky_relu(h, config_.leaky_slope);
  return kernels::linear(h, params_.at(fc(p, 2) + ".weight").value, &params_.at(fc(p, 2) + ".bias").value);
}

std::vector<Tensor> Model::lossnet_features(const Tensor& acoustic) const {
  std::vector<Tensor> feats;
  Tensor h = acoustic;
  for (int i = 1; i <= 4; ++i) {
    const std::string n = fc("lossnet", i);
    h = kernels::leaky_relu(kernels::linear(h, params_.at(n + ".weight").value, &params_.at(n + ".bias").value),
                            config_.leaky_slope);
    feats.push_back(h);
  }
  return feats;
}

Eigen::VectorXd Model::distance_from_acoustic(const Tensor& ref, const Tensor& per) const {
  if (ref.shape() != per.shape()) throw ShapeError("distance: batch shapes differ");
  const auto fr = lossnet_features(ref);
  const auto fp = lossnet_features(per);
  const Index n = ref.dim(0);
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  for (std::size_t l = 0; l < fr.size(); ++l)
    d += (fr[l].matrix(n) - fp[l].matrix(n)).cwiseAbs().rowwise().mean();
  return d;
}

double Model::distance(const Waveform& ref, const Waveform& per) const {
  const Waveform pair[2] = {ref, per};
  const Tensor emb = embed(batch_from(pair));
  const Index a = config_.encoder.acoustic_dim;
  const auto m = emb.matrix(2);
  Tensor r({1, a}, Eigen::VectorXd(m.row(0).head(a).transpose()));
  Tensor p({1, a}, Eigen::VectorXd(m.row(1).head(a).transpose()));
  return distance_from_acoustic(r, p)[0];
}

double Model::judge(double d) const {
  if (!(d >= 0.0)) throw ContractError("judge: distance must be non-negative");
  Tensor x({1, 1}, {d});
  Tensor h = kernels::leaky_relu(kernels::linear(x, params_.at("classifier.fc1.weight").value,
                                                 &params_.at("classifier.fc1.bias").value),
                                 config_.leaky_slope);
  const double z = kernels::linear(h, params_.at("classifier.fc2.weight").value,
                                   &params_.at("classifier.fc2.bias").value)[0];
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

Var Model::embed(Graph& g, Var x, bool training) {
  const EncoderConfig& e = config_.encoder;
  const Tensor& xv = x.value();
  if (xv.rank() != 3 || xv.dim(1) != 1) throw ShapeError("encode: input must be [batch, 1, len]");
  if (xv.dim(2) % e.downsampling() != 0) throw ShapeError("encode: length not divisible by 16");
  Var h = x;
  for (int l = 1; l <= e.n_layers; ++l) {
    const std::string n = conv_name(l);
    h = conv1d(h, g.param(params_.at(n + ".weight")), std::nullopt, e.stride(l), (e.kernel - 1) / 2);
    h = batch_norm1d(h, g.param(params_.at(n + ".bn.gamma")), g.param(params_.at(n + ".bn.beta")),
                     params_.at(n + ".bn.running_mean"), params_.at(n + ".bn.running_var"), training,
                     config_.bn_momentum, config_.bn_eps);
    h = leaky_relu(h, config_.leaky_slope);
  }
  return global_avg_pool(h);
}

Var Model::acoustic(Var embedding) const { return slice_cols(embedding, 0, config_.encoder.acoustic_dim); }

Var Model::content(Var embedding) const {
  return slice_cols(embedding, config_.encoder.acoustic_dim, config_.encoder.content_dim);
}

Var Model::project(Graph& g, Var half, Half which) {
  const std::string p = std::string("projection.") + half_name(which);
  Var h = linear(half, g.param(params_.at(fc(p, 1) + ".weight")), g.param(params_.at(fc(p, 1) + ".bias")));
  h = leaky_relu(h, config_.leaky_slope);
  return linear(h, g.param(params_.at(fc(p, 2) + ".weight")), g.param(params_.at(fc(p, 2) + ".bias")));
}

Var Model::distance(Graph& g, Var acoustic_ref, Var acoustic_per) {
  Var hr = acoustic_ref, hp = acoustic_per;
  std::optional<Var> total;
  for (int i = 1; i <= 4; ++i) {
    const std::string n = fc("lossnet", i);
    Var w = g.param(params_.at(n + ".weight"));
    Var b = g.param(params_.at(n + ".bias"));
    hr = leaky_relu(linear(hr, w, b), config_.leaky_slope);
    hp = leaky_relu(linear(hp, w, b), config_.leaky_slope);
    Var layer = row_mean(abs(hr - hp));
    total = total ? add(*total, layer) : layer;
  }
  return *total;
}

Var Model::judge(Graph& g, Var d) {
  const Index n = d.value().size();
  Var x = reshape(d, {n, 1});
  Var h = leaky_relu(linear(x, g.param(params_.at("classifier.fc1.weight")), g.param(params_.at("classifier.fc1.bias"))),
                     config_.leaky_slope);
  Var z = linear(h, g.param(params_.at("classifier.fc2.weight")), g.param(params_.at("classifier.fc2.bias")));
  return sigmoid(reshape(z, {n}));
}

}  // namespace cdpam
