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
#include <string>
#include <vector>

#include "cdpam/audio.hpp"
#include "cdpam/perturb.hpp"
#include "json.hpp"

namespace cdpam {

struct SpeakerParams {
  double f0_hz = 120.0;          // 80 .. 250
  double vibrato_rate_hz = 5.0;
  double vibrato_depth = 0.02;   // fraction of f0
  double formant_scale = 1.0;    // vocal-tract length factor
  double tilt = 1.0;             // harmonic roll-off exponent
};

struct Utterance {
  std::string id;
  Waveform clean;
  int speaker_id = 0;
  SpeakerParams speaker;
  int n_syllables = 0;
};

struct CorpusSpec {
  int sample_rate_hz = kCanonicalSampleRate;
  Index clip_samples = kCanonicalClipSamples;
};

SpeakerParams speaker_params(std::uint64_t seed, int speaker_id);

// Seeded speech-like clips: harmonic source with vibrato through three
// time-varying formant resonators, with silence gaps between syllables.
std::vector<Utterance> synth_corpus(int n, int n_speakers, std::uint64_t seed,
                                    const CorpusSpec& format = {}, const std::string& id_prefix = "utt");

// Every WAV in `dir` (sorted by name), converted to the canonical format.
// Speaker ids are all 0.
std::vector<Utterance> load_corpus_dir(const std::filesystem::path& dir, const CorpusSpec& format = {});

// Non-empty random subset of `families`.
std::vector<Family> sample_families(std::uint64_t seed, const std::vector<Family>& families);

enum class PairMode { kAcoustic, kContent };

// Waveform pairs for one contrastive batch. Acoustic mode: two different
// utterances sharing one spec. Content mode: one utterance under two
// independently drawn specs.
struct ContrastivePairs {
  PairMode mode = PairMode::kAcoustic;
  std::vector<Waveform> views_i, views_j;
  std::vector<PerturbSpec> specs_i, specs_j;
  std::vector<std::size_t> utterance_i, utterance_j;
  std::size_t size() const { return views_i.size(); }
};

ContrastivePairs make_contrastive_batch(const std::vector<Utterance>& corpus, PairMode mode,
                                        std::size_t batch_size, std::uint64_t seed,
                                        const std::vector<Family>& families,
                                        const PerturbRanges& ranges = {});

enum class JudgmentKind { kJndPair, kTriplet };
enum class LabelSource { kOracle, kFile };

// One supervision unit. JND pairs: ref vs a, label = 1 when "different".
// Triplets: ref vs a and b, label = 0 when A is preferred (closer), 1 for B.
struct JudgmentRecord {
  JudgmentKind kind = JudgmentKind::kJndPair;
  std::string ref_id, a_id, b_id;
  std::string ref_path, a_path, b_path;  // relative to the manifest directory
  std::vector<PerturbSpec> specs;        // one per perturbed clip
  std::vector<double> magnitudes;        // oracle magnitude per perturbed clip
  int label = 0;
  LabelSource label_source = LabelSource::kOracle;

  bool different() const { return label == 1; }
  bool prefers_a() const { return label == 0; }
  void validate() const;
};

void to_json(nlohmann::json& j, const JudgmentRecord& r);
void from_json(const nlohmann::json& j, JudgmentRecord& r);

struct OracleConfig {
  double threshold = 0.15;
  double noise_sigma = 0.03;
  // JND pairs draw their target severity from [0, jnd_span * threshold].
  double jnd_span = 2.0;
  double triplet_min_gap = 0.05;
  std::vector<Family> families = {kAllFamilies.begin(), kAllFamilies.end()};
  PerturbRanges ranges;
  SeverityWeights weights;
};

// Oracle label: different iff magnitude + N(0, sigma) > threshold.
int oracle_label(double magnitude, double threshold, double sigma, std::uint64_t seed);

std::vector<JudgmentRecord> oracle_jnd(const std::vector<Utterance>& corpus, int n_pairs,
                                       const OracleConfig& cfg, std::uint64_t seed);
std::vector<JudgmentRecord> oracle_triplets(const std::vector<Utterance>& corpus, int n,
                                            const OracleConfig& cfg, std::uint64_t seed);

// Perturbed clips of a record, one per spec, rendered from its reference.
std::vector<Waveform> render_record(const JudgmentRecord& r, const Waveform& ref);

void write_manifest(const std::vector<JudgmentRecord>& records, const std::filesystem::path& path);
std::vector<JudgmentRecord> read_manifest(const std::filesystem::path& path);

// JSON-lines helpers.
void write_jsonl(const std::vector<nlohmann::json>& rows, const std::filesystem::path& path);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

}  // namespace cdpam
