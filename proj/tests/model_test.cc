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

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "cdpam/rng.hpp"
#include "gtest/gtest.h"

namespace cdpam {
namespace {

namespace fs = std::filesystem;

Waveform noise_clip(std::uint64_t seed, Index n) {
  Rng rng(seed);
  Waveform w;
  w.samples = Eigen::VectorXd::NullaryExpr(n, [&] { return 0.1 * rng.normal(); });
  return w;
}

class ModelTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("cdpam_model_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST(ModelConfigTest, DefaultTopology) {
  const ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.encoder.n_layers, 16);
  EXPECT_EQ(c.encoder.downsampling(), 16);
  EXPECT_EQ(c.encoder.channels(1), 128);
  EXPECT_EQ(c.encoder.channels(16), 1024);
  EXPECT_EQ(c.encoder.stride(4), 2);
  EXPECT_EQ(c.encoder.stride(5), 1);
  EXPECT_EQ(c.encoder.acoustic_dim + c.encoder.content_dim, c.encoder.embedding_dim);
  EXPECT_EQ(c.projection.back(), 256);
  EXPECT_EQ(c.lossnet, (std::vector<Index>{512, 256, 128, 64}));

  const ModelConfig d = ModelConfig::desk();
  EXPECT_NO_THROW(d.validate());
  EXPECT_EQ(d.encoder.n_layers, 16);
  EXPECT_EQ(d.encoder.downsampling(), 16);

  ModelConfig bad;
  bad.encoder.acoustic_dim = 100;
  EXPECT_THROW(bad.validate(), PreconditionError);
}

TEST(ModelConfigTest, JsonRoundTrip) {
  const ModelConfig d = ModelConfig::desk();
  const nlohmann::json j = d;
  const ModelConfig back = j.get<ModelConfig>();
  EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
}

TEST(ModelShapes, CanonicalClip) {
  const Model m(ModelConfig::desk(), 1);
  const Index e = m.config().encoder.embedding_dim;
  const Waveform clip = noise_clip(2, kCanonicalClipSamples);
  const Tensor x = Model::batch_from(std::span<const Waveform>(&clip, 1));
  EXPECT_EQ(x.shape(), (Shape{1, 1, 40000}));
  EXPECT_EQ(m.encoder_features(x).shape(), (Shape{1, e, 2500}));
  const Tensor emb = m.embed(x);
  EXPECT_EQ(emb.shape(), (Shape{1, e}));
  const auto halves = m.encode(x);
  ASSERT_EQ(halves.size(), 1u);
  EXPECT_EQ(halves[0].acoustic.size(), m.config().encoder.acoustic_dim);
  EXPECT_EQ(halves[0].content.size(), m.config().encoder.content_dim);
  const Tensor a({1, m.config().encoder.acoustic_dim}, halves[0].acoustic);
  EXPECT_EQ(m.project(a, Half::kAcoustic).shape(), (Shape{1, m.config().projection.back()}));
  const auto feats = m.lossnet_features(a);
  ASSERT_EQ(feats.size(), m.config().lossnet.size());
  for (std::size_t i = 0; i < feats.size(); ++i) EXPECT_EQ(feats[i].dim(1), m.config().lossnet[i]);
}

TEST(ModelShapes, LengthNotMultipleOfDownsampling) {
  const Model m(ModelConfig::desk(), 1);
  const Waveform clip = noise_clip(3, 40001);
  EXPECT_THROW(m.embed(Model::batch_from(std::span<const Waveform>(&clip, 1))), ShapeError);
}

TEST(ModelDistance, SymmetricZeroAndNonNegative) {
  const Model m(ModelConfig::desk(), 4);
  const Waveform a = noise_clip(5, 8000), b = noise_clip(6, 8000);
  EXPECT_EQ(m.distance(a, a), 0.0);
  const double ab = m.distance(a, b);
  EXPECT_GT(ab, 0.0);
  EXPECT_NEAR(ab, m.distance(b, a), 1e-12 * std::max(1.0, ab));
}

TEST(ModelDistance, GraphMatchesInference) {
  Model m(ModelConfig::desk(), 7);
  const Waveform clips[2] = {noise_clip(8, 4000), noise_clip(9, 4000)};
  const Tensor x = Model::batch_from(clips);
  Graph g;
  const Var emb = m.embed(g, g.constant(x), false);
  const Tensor ref = m.embed(x);
  EXPECT_LE((emb.value().values() - ref.values()).cwiseAbs().maxCoeff(), 1e-10);
  const Var ea = m.embed(g, g.constant(Model::batch_from(std::span<const Waveform>(&clips[0], 1))), false);
  const Var eb = m.embed(g, g.constant(Model::batch_from(std::span<const Waveform>(&clips[1], 1))), false);
  const Var d = m.distance(g, m.acoustic(ea), m.acoustic(eb));
  EXPECT_NEAR(d.value()[0], m.distance(clips[0], clips[1]), 1e-10);
}

TEST(ModelJudge, RangeAndMonotoneParameterised) {
  Model m(ModelConfig::desk(), 10);
  for (double d : {0.0, 0.01, 0.1, 1.0, 10.0}) {
    const double p = m.judge(d);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
  EXPECT_THROW(m.judge(-0.1), ContractError);
  Graph g;
  const Var p = m.judge(g, g.constant(Tensor({3}, {0.0, 0.5, 2.0})));
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(p.value()[i], m.judge(std::vector{0.0, 0.5, 2.0}[i]), 1e-12);
}

TEST(ModelInit, SeedDeterminism) {
  const Model a(ModelConfig::desk(), 11), b(ModelConfig::desk(), 11), c(ModelConfig::desk(), 12);
  for (const auto& [name, p] : a.params()) EXPECT_EQ(p.value.values(), b.params().at(name).value.values()) << name;
  EXPECT_NE(a.params().at("classifier.fc1.weight").value.values(),
            c.params().at("classifier.fc1.weight").value.values());
}

TEST_F(ModelTest, CheckpointRoundTrip) {
  Model m(ModelConfig::desk(), 13);
  m.set_stage(Stage::kJnd);
  m.metadata()["note"] = "x";
  const fs::path p = dir_ / "m.ckpt";
  save_checkpoint(m, p);
  const Model back = load_checkpoint(p);
  EXPECT_EQ(back.stage(), Stage::kJnd);
  EXPECT_EQ(back.seed(), 13u);
  EXPECT_EQ(back.metadata()["note"], "x");
  ASSERT_EQ(back.params().size(), m.params().size());
  for (const auto& [name, prm] : m.params()) {
    EXPECT_EQ(back.params().at(name).value.shape(), prm.value.shape());
    EXPECT_EQ(back.params().at(name).value.values(), prm.value.values()) << name;
  }
  const Waveform a = noise_clip(14, 4000), b = noise_clip(15, 4000);
  EXPECT_EQ(back.distance(a, b), m.distance(a, b));
  EXPECT_FALSE(fs::exists(dir_ / "m.ckpt.tmp"));
}

TEST_F(ModelTest, CheckpointErrors) {
  const Model m(ModelConfig::desk(), 16);
  const fs::path p = dir_ / "m.ckpt";
  save_checkpoint(m, p);
  std::string bytes;
  {
    std::ifstream in(p, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& data) {
    const fs::path q = dir_ / "bad.ckpt";
    std::ofstream(q, std::ios::binary) << data;
    return q;
  };
  EXPECT_THROW(load_checkpoint(write(bytes.substr(0, bytes.size() - 8))), FormatError);
  EXPECT_THROW(load_checkpoint(write(bytes.substr(0, 6))), FormatError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(load_checkpoint(write(magic)), FormatError);
  std::string version = bytes;
  version[4] = static_cast<char>(kCheckpointVersion + 1);
  EXPECT_THROW(load_checkpoint(write(version)), VersionError);
  EXPECT_THROW(load_checkpoint(dir_ / "missing.ckpt"), IoError);
  EXPECT_ANY_THROW(save_checkpoint(m, p / "child.ckpt"));
}

TEST(StageNames, RoundTrip) {
  for (Stage s : {Stage::kInit, Stage::kPretrained, Stage::kJnd, Stage::kFinetuned})
    EXPECT_EQ(stage_from_name(stage_name(s)), s);
  EXPECT_THROW(stage_from_name("bogus"), FormatError);
}

}  // namespace
}  // namespace cdpam
