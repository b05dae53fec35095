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

#include "cdpam/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include "cdpam/error.hpp"
#include "cdpam/parallel.hpp"
#include "cdpam/rng.hpp"

namespace cdpam {
namespace {

using nlohmann::json;
constexpr double kPi = std::numbers::pi;

struct Vowel {
  double f1, f2, f3;
};

Vowel random_vowel(Rng& rng, double scale) {
  return {rng.uniform(300.0, 850.0) * scale, rng.uniform(850.0, 2300.0) * scale,
          rng.uniform(2300.0, 3200.0) * scale};
}

// Two-pole resonator with per-sample centre frequency.
struct Resonator {
  double y1 = 0.0, y2 = 0.0;
  double step(double x, double freq_hz, double bw_hz, double fs) {
    const double r = std::exp(-kPi * bw_hz / fs);
    const double a1 = -2.0 * r * std::cos(2.0 * kPi * freq_hz / fs);
    const double a2 = r * r;
    const double y = (1.0 - r) * x - a1 * y1 - a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

Utterance synth_utterance(const std::string& id, int speaker_id, const SpeakerParams& sp,
                          std::uint64_t seed, const CorpusSpec& fmt) {
  Rng rng(seed);
  const double fs = fmt.sample_rate_hz;
  const Index n = fmt.clip_samples;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);

  const double nyquist_cap = 0.45 * fs;
  const double bandwidths[3] = {80.0, 110.0, 160.0};
  Resonator res[3];
  double phase = 0.0;
  int syllables = 0;

  Index t = static_cast<Index>(rng.uniform(0.05, 0.25) * fs);
  Vowel cur = random_vowel(rng, sp.formant_scale);
  while (t < n) {
    const Index len = static_cast<Index>(rng.uniform(0.12, 0.35) * fs);
    const Index gap = static_cast<Index>(rng.uniform(0.03, 0.2) * fs);
    const Vowel next = random_vowel(rng, sp.formant_scale);
    const double accent = rng.uniform(0.9, 1.12);
    const double level = rng.uniform(0.6, 1.0);
    const Index ramp = std::max<Index>(1, static_cast<Index>(0.02 * fs));
    ++syllables;
    for (Index k = 0; k < len && t + k < n; ++k) {
      const double u = static_cast<double>(k) / static_cast<double>(len);
      const double time_s = static_cast<double>(t + k) / fs;
      const double decl = 1.0 - 0.1 * static_cast<double>(t + k) / static_cast<double>(n);
      const double f0 = sp.f0_hz * accent * decl *
                        (1.0 + sp.vibrato_depth * std::sin(2.0 * kPi * sp.vibrato_rate_hz * time_s));
      phase += 2.0 * kPi * f0 / fs;
      if (phase > 2.0 * kPi) phase -= 2.0 * kPi;

      // Harmonic source with a 1/k^tilt roll-off.
      const int harmonics = std::max(1, static_cast<int>(nyquist_cap / f0));
      const std::complex<double> z(std::cos(phase), std::sin(phase));
      std::complex<double> zk = z;
      double src = 0.0;
      for (int h = 1; h <= harmonics; ++h) {
        src += zk.imag() / std::pow(static_cast<double>(h), sp.tilt);
        zk *= z;
      }

      double env = level;
      if (k < ramp) env *= 0.5 - 0.5 * std::cos(kPi * static_cast<double>(k) / ramp);
      if (len - k <= ramp) env *= 0.5 - 0.5 * std::cos(kPi * static_cast<double>(len - k) / ramp);

      const double f[3] = {cur.f1 + u * (next.f1 - cur.f1), cur.f2 + u * (next.f2 - cur.f2),
                           cur.f3 + u * (next.f3 - cur.f3)};
      double y = 0.0;
      double gain = 1.0;
      for (int q = 0; q < 3; ++q) {
        y += gain * res[q].step(src, std::min(f[q], nyquist_cap), bandwidths[q], fs);
        gain *= 0.5;
      }
      out[t + k] = env * y;
    }
    cur = next;
    t += len + gap;
  }

  const double target = rng.uniform(0.05, 0.15);
  const double r = rms(out);
  if (r > 0.0) out *= target / r;

  Utterance u;
  u.id = id;
  u.clean.samples = std::move(out);
  u.clean.sample_rate_hz = fmt.sample_rate_hz;
  u.speaker_id = speaker_id;
  u.speaker = sp;
  u.n_syllables = syllables;
  return u;
}

std::string pad_id(const std::string& prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_%05zu", i);
  return prefix + buf;
}

const char* kind_name(JudgmentKind k) { return k == JudgmentKind::kJndPair ? "jnd_pair" : "triplet"; }

}  // namespace

SpeakerParams speaker_params(std::uint64_t seed, int speaker_id) {
  Rng rng(derive_seed(seed, {0x5e, static_cast<std::uint64_t>(speaker_id)}));
  SpeakerParams p;
  p.f0_hz = rng.uniform(80.0, 250.0);
  p.vibrato_rate_hz = rng.uniform(4.0, 7.0);
  p.vibrato_depth = rng.uniform(0.01, 0.04);
  p.formant_scale = rng.uniform(0.85, 1.15);
  p.tilt = rng.uniform(0.8, 1.4);
  return p;
}

std::vector<Utterance> synth_corpus(int n, int n_speakers, std::uint64_t seed, const CorpusSpec& format,
                                    const std::string& id_prefix) {
  if (n < 1 || n_speakers < 1) throw PreconditionError("synth_corpus: n and n_speakers must be >= 1");
  if (format.sample_rate_hz <= 0 || format.clip_samples <= 0)
    throw PreconditionError("synth_corpus: invalid clip format");
  std::vector<SpeakerParams> speakers;
  for (int s = 0; s < n_speakers; ++s) speakers.push_back(speaker_params(seed, s));
  std::vector<Utterance> out(static_cast<std::size_t>(n));
  parallel_for(out.size(), [&](std::size_t i) {
    const int spk = static_cast<int>(i % static_cast<std::size_t>(n_speakers));
    out[i] = synth_utterance(pad_id(id_prefix, i), spk, speakers[spk], derive_seed(seed, {0x07, i}), format);
  });
  return out;
}

std::vector<Utterance> load_corpus_dir(const std::filesystem::path& dir, const CorpusSpec& format) {
  if (!std::filesystem::is_directory(dir)) throw IoError("corpus directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no WAV files in " + dir.string());
  std::vector<Utterance> out(files.size());
  parallel_for(files.size(), [&](std::size_t i) {
    out[i].id = files[i].stem().string();
    out[i].clean = to_canonical(read_wav(files[i]), format.sample_rate_hz, format.clip_samples);
  });
  return out;
}

std::vector<Family> sample_families(std::uint64_t seed, const std::vector<Family>& families) {
  if (families.empty()) throw PreconditionError("sample_families: empty family list");
  Rng rng(seed);
  const std::uint64_t n = families.size();
  const std::uint64_t mask = 1 + rng.below((1ULL << n) - 1);
  std::vector<Family> out;
  for (std::uint64_t i = 0; i < n; ++i)
    if (mask & (1ULL << i)) out.push_back(families[i]);
  return out;
}

ContrastivePairs make_contrastive_batch(const std::vector<Utterance>& corpus, PairMode mode,
                                        std::size_t batch_size, std::uint64_t seed,
                                        const std::vector<Family>& families, const PerturbRanges& ranges) {
  if (batch_size == 0) throw PreconditionError("make_contrastive_batch: batch_size must be >= 1");
  const std::size_t need = mode == PairMode::kAcoustic ? 2 * batch_size : batch_size;
  if (corpus.size() < need)
    throw CapacityError("corpus has " + std::to_string(corpus.size()) + " utterances, batch needs " +
                        std::to_string(need));
  Rng rng(seed);
  // Partial Fisher-Yates: first `need` entries are distinct utterances.
  std::vector<std::size_t> idx(corpus.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < need; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);

  ContrastivePairs p;
  p.mode = mode;
  p.views_i.resize(batch_size);
  p.views_j.resize(batch_size);
  for (std::size_t k = 0; k < batch_size; ++k) {
    const std::uint64_t s1 = rng.next_u64(), s2 = rng.next_u64(), s3 = rng.next_u64(), s4 = rng.next_u64();
    if (mode == PairMode::kAcoustic) {
      p.utterance_i.push_back(idx[2 * k]);
      p.utterance_j.push_back(idx[2 * k + 1]);
      const PerturbSpec s = sample_spec(s2, sample_families(s1, families), ranges);
      p.specs_i.push_back(s);
      p.specs_j.push_back(s);
    } else {
      p.utterance_i.push_back(idx[k]);
      p.utterance_j.push_back(idx[k]);
      PerturbSpec a = sample_spec(s2, sample_families(s1, families), ranges);
      PerturbSpec b = sample_spec(s4, sample_families(s3, families), ranges);
      p.specs_i.push_back(a);
      p.specs_j.push_back(b);
    }
  }
  parallel_for(batch_size, [&](std::size_t k) {
    p.views_i[k] = apply(p.specs_i[k], corpus[p.utterance_i[k]].clean);
    p.views_j[k] = apply(p.specs_j[k], corpus[p.utterance_j[k]].clean);
  });
  return p;
}

void JudgmentRecord::validate() const {
  if (ref_id.empty() || a_id.empty()) throw DataError("judgment record: missing clip id");
  if (label != 0 && label != 1) throw DataError("judgment record: label must be 0 or 1");
  if (kind == JudgmentKind::kTriplet) {
    if (b_id.empty()) throw DataError("triplet record: missing b_id");
    if (a_id == b_id) throw DataError("triplet record: comparison clips must be distinct");
  }
  const std::size_t n_clips = kind == JudgmentKind::kTriplet ? 2 : 1;
  if (!specs.empty() && specs.size() != n_clips) throw DataError("judgment record: wrong number of specs");
  if (!magnitudes.empty() && magnitudes.size() != n_clips)
    throw DataError("judgment record: wrong number of magnitudes");
}

void to_json(json& j, const JudgmentRecord& r) {
  j = json::object();
  j["kind"] = kind_name(r.kind);
  j["ref_id"] = r.ref_id;
  j["a_id"] = r.a_id;
  if (r.kind == JudgmentKind::kTriplet) j["b_id"] = r.b_id;
  j["ref_path"] = r.ref_path;
  j["a_path"] = r.a_path;
  if (r.kind == JudgmentKind::kTriplet) j["b_path"] = r.b_path;
  j["specs"] = r.specs;
  j["magnitudes"] = r.magnitudes;
  if (r.kind == JudgmentKind::kJndPair)
    j["label"] = r.label == 1 ? "different" : "same";
  else
    j["label"] = r.label == 0 ? "A" : "B";
  j["label_source"] = r.label_source == LabelSource::kOracle ? "oracle" : "file";
}

void from_json(const json& j, JudgmentRecord& r) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "jnd_pair")
      r.kind = JudgmentKind::kJndPair;
    else if (kind == "triplet")
      r.kind = JudgmentKind::kTriplet;
    else
      throw DataError("unknown record kind: " + kind);
    r.ref_id = j.at("ref_id").get<std::string>();
    r.a_id = j.at("a_id").get<std::string>();
    r.b_id = j.value("b_id", std::string());
    r.ref_path = j.value("ref_path", std::string());
    r.a_path = j.value("a_path", std::string());
    r.b_path = j.value("b_path", std::string());
    r.specs = j.value("specs", std::vector<PerturbSpec>{});
    r.magnitudes = j.value("magnitudes", std::vector<double>{});
    const std::string label = j.at("label").get<std::string>();
    if (r.kind == JudgmentKind::kJndPair) {
      if (label != "same" && label != "different") throw DataError("bad jnd label: " + label);
      r.label = label == "different" ? 1 : 0;
    } else {
      if (label != "A" && label != "B") throw DataError("bad triplet label: " + label);
      r.label = label == "B" ? 1 : 0;
    }
    const std::string src = j.value("label_source", std::string("file"));
    r.label_source = src == "oracle" ? LabelSource::kOracle : LabelSource::kFile;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed judgment record: ") + e.what());
  }
  r.validate();
}

int oracle_label(double magnitude, double threshold, double sigma, std::uint64_t seed) {
  double m = magnitude;
  if (sigma > 0.0) {
    Rng rng(seed);
    m += sigma * rng.normal();
  }
  return m > threshold ? 1 : 0;
}

std::vector<JudgmentRecord> oracle_jnd(const std::vector<Utterance>& corpus, int n_pairs,
                                       const OracleConfig& cfg, std::uint64_t seed) {
  if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) throw PreconditionError("oracle_jnd: threshold must be in (0,1)");
  if (corpus.empty() || n_pairs < 0) throw PreconditionError("oracle_jnd: empty corpus");
  std::vector<JudgmentRecord> out(static_cast<std::size_t>(n_pairs));
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(derive_seed(seed, {0x1d, i}));
    const Utterance& u = corpus[rng.below(corpus.size())];
    const double level = rng.uniform(0.0, std::min(1.0, cfg.jnd_span * cfg.threshold));
    const auto fams = sample_families(rng.next_u64(), cfg.families);
    const PerturbSpec spec = spec_at_severity(fams, level, rng.next_u64(), cfg.ranges);
    const double mag = magnitude(spec, cfg.ranges, cfg.weights);
    JudgmentRecord& r = out[i];
    r.kind = JudgmentKind::kJndPair;
    r.ref_id = u.id;
    r.a_id = pad_id("jnd", i);
    r.specs = {spec};
    r.magnitudes = {mag};
    r.label = oracle_label(mag, cfg.threshold, cfg.noise_sigma, rng.next_u64());
  }
  return out;
}

std::vector<JudgmentRecord> oracle_triplets(const std::vector<Utterance>& corpus, int n,
                                            const OracleConfig& cfg, std::uint64_t seed) {
  if (n < 1) throw PreconditionError("oracle_triplets: n must be >= 1");
  if (corpus.empty()) throw PreconditionError("oracle_triplets: empty corpus");
  if (cfg.triplet_min_gap >= 1.0) throw PreconditionError("oracle_triplets: min gap must be < 1");
  std::vector<JudgmentRecord> out(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(derive_seed(seed, {0x3c, i}));
    const Utterance& u = corpus[rng.below(corpus.size())];
    PerturbSpec sa, sb;
    double ma = 0.0, mb = 0.0;
    // Rejection on realised magnitudes, so the gap also holds after rounding.
    for (;;) {
      sa = spec_at_severity(sample_families(rng.next_u64(), cfg.families), rng.uniform(), rng.next_u64(),
                            cfg.ranges);
      sb = spec_at_severity(sample_families(rng.next_u64(), cfg.families), rng.uniform(), rng.next_u64(),
                            cfg.ranges);
      ma = magnitude(sa, cfg.ranges, cfg.weights);
      mb = magnitude(sb, cfg.ranges, cfg.weights);
      const double gap = std::abs(ma - mb);
      if (gap > 0.0 && gap >= cfg.triplet_min_gap) break;
    }
    JudgmentRecord& r = out[i];
    r.kind = JudgmentKind::kTriplet;
    r.ref_id = u.id;
    r.a_id = pad_id("tri", i) + "_a";
    r.b_id = pad_id("tri", i) + "_b";
    r.specs = {sa, sb};
    r.magnitudes = {ma, mb};
    r.label = ma < mb ? 0 : 1;
  }
  return out;
}

std::vector<Waveform> render_record(const JudgmentRecord& r, const Waveform& ref) {
  std::vector<Waveform> out;
  for (const PerturbSpec& s : r.specs) out.push_back(apply(s, ref));
  return out;
}

void write_jsonl(const std::vector<json>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    for (const json& row : rows) f << row.dump() << '\n';
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

void write_manifest(const std::vector<JudgmentRecord>& records, const std::filesystem::path& path) {
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.emplace_back(r);
  write_jsonl(rows, path);
}

std::vector<JudgmentRecord> read_manifest(const std::filesystem::path& path) {
  std::vector<JudgmentRecord> out;
  for (const json& row : read_jsonl(path)) out.push_back(row.get<JudgmentRecord>());
  return out;
}

}  // namespace cdpam
