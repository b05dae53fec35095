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

#include "cdpam/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include "cdpam/error.hpp"
#include "cdpam/parallel.hpp"
#include "cdpam/rng.hpp"

namespace cdpam {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalConfig, n_utterances, n_speakers, n_triplets, triplet_min_gap,
                                                mono_items, mono_levels, common_pairs, retrieval_groups,
                                                retrieval_items, retrieval_k, mos_conditions, mos_utts_per_cell,
                                                mos_rating_sigma, robust_cases, robust_snr_db, robust_gain_db, bins)

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Seed streams of one run.
enum : std::uint64_t {
  kSeedCorpus = 1,
  kSeedJnd,
  kSeedTriplets,
  kSeedHeldout,
  kSeedEvalTriplets,
  kSeedMono,
  kSeedCommon,
  kSeedRetrieval,
  kSeedMos,
  kSeedRobust,
  kSeedModel,
  kSeedTrain,
};

std::vector<std::string> family_names(const std::vector<Family>& fs) {
  std::vector<std::string> out;
  for (Family f : fs) out.push_back(family_name(f));
  return out;
}

std::vector<Family> families_from(const json& j) {
  std::vector<Family> out;
  for (const auto& f : j) out.push_back(family_from_name(f.get<std::string>()));
  return out;
}

std::string wav_rel(const std::string& dir, const std::string& id) { return dir + "/" + id + ".wav"; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << text;
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_clips(const fs::path& root, const std::vector<std::pair<std::string, Waveform>>& clips) {
  std::set<fs::path> dirs;
  for (const auto& [rel, w] : clips) dirs.insert((root / rel).parent_path());
  for (const auto& d : dirs) fs::create_directories(d);
  parallel_for(clips.size(), [&](std::size_t i) { write_wav(clips[i].second, root / clips[i].first); });
}

// Writes utterances as WAV plus an index, then reads them back so callers see
// the same 16-bit samples that later stages load.
std::vector<Utterance> store_corpus(const std::vector<Utterance>& corpus, const fs::path& root,
                                    const std::string& dir, const CorpusSpec& fmt) {
  std::vector<std::pair<std::string, Waveform>> clips;
  std::vector<json> rows;
  for (const auto& u : corpus) {
    clips.emplace_back(wav_rel(dir, u.id), u.clean);
    rows.push_back({{"id", u.id}, {"speaker_id", u.speaker_id}, {"path", wav_rel(dir, u.id)}});
  }
  write_clips(root, clips);
  write_jsonl(rows, root / (dir + ".jsonl"));
  std::vector<Utterance> out = corpus;
  parallel_for(out.size(), [&](std::size_t i) {
    out[i].clean = to_canonical(read_wav(root / clips[i].first), fmt.sample_rate_hz, fmt.clip_samples);
  });
  return out;
}

std::vector<Utterance> read_corpus_index(const fs::path& root, const std::string& dir, const CorpusSpec& fmt) {
  const fs::path index = root / (dir + ".jsonl");
  if (!fs::exists(index)) throw DataError("corpus index missing: " + index.string() + " (run synth-data first)");
  const auto rows = read_jsonl(index);
  std::vector<Utterance> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out[i].id = rows[i].at("id").get<std::string>();
    out[i].speaker_id = rows[i].value("speaker_id", 0);
  }
  parallel_for(out.size(), [&](std::size_t i) {
    out[i].clean = to_canonical(read_wav(root / rows[i].at("path").get<std::string>()), fmt.sample_rate_hz,
                                fmt.clip_samples);
  });
  return out;
}

// Renders and writes the perturbed clips of oracle records; fills in paths.
void store_records(std::vector<JudgmentRecord>& records, const std::vector<Utterance>& corpus, const fs::path& root,
                   const std::string& corpus_dir, const std::string& clip_dir) {
  std::map<std::string, const Utterance*> by_id;
  for (const auto& u : corpus) by_id[u.id] = &u;
  for (auto& r : records) {
    r.ref_path = wav_rel(corpus_dir, r.ref_id);
    r.a_path = wav_rel(clip_dir, r.a_id);
    if (r.kind == JudgmentKind::kTriplet) r.b_path = wav_rel(clip_dir, r.b_id);
  }
  fs::create_directories(root / clip_dir);
  parallel_for(records.size(), [&](std::size_t i) {
    const auto& r = records[i];
    const auto clips = render_record(r, by_id.at(r.ref_id)->clean);
    write_wav(clips[0], root / r.a_path);
    if (r.kind == JudgmentKind::kTriplet) write_wav(clips[1], root / r.b_path);
  });
}

std::vector<std::vector<Family>> mono_series(const std::vector<Family>& families) {
  std::vector<std::vector<Family>> out;
  for (Family f : families) out.push_back({f});
  if (families.size() > 1) out.push_back(families);
  return out;
}

std::string series_name(const std::vector<Family>& fams) {
  std::string s;
  for (Family f : fams) s += (s.empty() ? "" : "+") + family_name(f);
  return s;
}

std::string idx_name(const char* prefix, std::initializer_list<int> parts) {
  std::string s = prefix;
  char buf[16];
  for (int p : parts) {
    std::snprintf(buf, sizeof(buf), "_%03d", p);
    s += buf;
  }
  return s;
}

void synth_eval_split(const RunConfig& cfg, const fs::path& root) {
  const EvalConfig& e = cfg.eval;
  const std::uint64_t seed = cfg.seed;
  fs::create_directories(root);
  const auto held = store_corpus(
      synth_corpus(e.n_utterances, e.n_speakers, derive_seed(seed, {kSeedHeldout}), cfg.audio, "heldout"), root,
      "corpus", cfg.audio);
  const std::size_t n_held = held.size();

  // Triplets with a guaranteed magnitude gap.
  OracleConfig oc = cfg.data.oracle;
  oc.triplet_min_gap = e.triplet_min_gap;
  auto triplets = oracle_triplets(held, e.n_triplets, oc, derive_seed(seed, {kSeedEvalTriplets}));
  store_records(triplets, held, root, "corpus", "triplets");
  write_manifest(triplets, root / "triplets.jsonl");

  std::vector<std::pair<std::string, Waveform>> clips;
  std::vector<json> rows;

  // Monotonicity series: same content and seed across levels.
  const auto series = mono_series(cfg.families);
  for (std::size_t s = 0; s < series.size(); ++s)
    for (int i = 0; i < e.mono_items; ++i) {
      const Utterance& u = held[static_cast<std::size_t>(i) % n_held];
      const std::uint64_t ss = derive_seed(seed, {kSeedMono, s, static_cast<std::uint64_t>(i)});
      for (int l = 1; l <= e.mono_levels; ++l) {
        const double level = static_cast<double>(l) / e.mono_levels;
        const PerturbSpec spec = spec_at_severity(series[s], level, ss, oc.ranges);
        const std::string rel = wav_rel("mono", idx_name("mono", {static_cast<int>(s), i, l}));
        clips.emplace_back(rel, apply(spec, u.clean));
        rows.push_back({{"series", series_name(series[s])},
                        {"item", i},
                        {"level", l},
                        {"severity", level},
                        {"magnitude", magnitude(spec, oc.ranges, oc.weights)},
                        {"spec", spec},
                        {"ref_path", wav_rel("corpus", u.id)},
                        {"path", rel}});
      }
    }
  write_jsonl(rows, root / "monotonicity.jsonl");
  rows.clear();

  // Common-area groups: one shared spec vs two independent specs, always on
  // two different utterances.
  for (int g = 0; g < 2; ++g)
    for (int k = 0; k < e.common_pairs; ++k) {
      Rng rng(derive_seed(seed, {kSeedCommon, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(k)}));
      const std::size_t ia = rng.below(n_held);
      std::size_t ib = rng.below(n_held - 1);
      if (ib >= ia) ++ib;
      const PerturbSpec sa = sample_spec(rng.next_u64(), sample_families(rng.next_u64(), cfg.families), oc.ranges);
      const PerturbSpec sb =
          g == 0 ? sa : sample_spec(rng.next_u64(), sample_families(rng.next_u64(), cfg.families), oc.ranges);
      const char* group = g == 0 ? "same" : "diff";
      const std::string ra = wav_rel("common", idx_name(group, {k, 0}));
      const std::string rb = wav_rel("common", idx_name(group, {k, 1}));
      clips.emplace_back(ra, apply(sa, held[ia].clean));
      clips.emplace_back(rb, apply(sb, held[ib].clean));
      rows.push_back({{"group", group}, {"a_path", ra}, {"b_path", rb}, {"specs", {sa, sb}}});
    }
  write_jsonl(rows, root / "common_area.jsonl");
  rows.clear();

  // Retrieval: each group is one spec applied to distinct utterances.
  if (static_cast<std::size_t>(e.retrieval_items) > n_held)
    throw CapacityError("retrieval needs " + std::to_string(e.retrieval_items) + " held-out utterances");
  for (int g = 0; g < e.retrieval_groups; ++g) {
    Rng rng(derive_seed(seed, {kSeedRetrieval, static_cast<std::uint64_t>(g)}));
    const double level = (g + 0.5) / e.retrieval_groups;
    const PerturbSpec spec =
        spec_at_severity(sample_families(rng.next_u64(), cfg.families), level, rng.next_u64(), oc.ranges);
    std::vector<std::size_t> idx(n_held);
    for (std::size_t i = 0; i < n_held; ++i) idx[i] = i;
    for (int j = 0; j < e.retrieval_items; ++j) {
      std::swap(idx[static_cast<std::size_t>(j)], idx[static_cast<std::size_t>(j) + rng.below(n_held - j)]);
      const std::string rel = wav_rel("retrieval", idx_name("ret", {g, j}));
      clips.emplace_back(rel, apply(spec, held[idx[static_cast<std::size_t>(j)]].clean));
      rows.push_back({{"group", g}, {"path", rel}, {"spec", spec}});
    }
  }
  write_jsonl(rows, root / "retrieval.jsonl");
  rows.clear();

  // Synthetic MOS: rating = 5 - 4 * magnitude + noise, clamped to [1, 5].
  std::vector<PerturbSpec> conditions;
  for (int c = 0; c < e.mos_conditions; ++c) {
    Rng rng(derive_seed(seed, {kSeedMos, static_cast<std::uint64_t>(c)}));
    conditions.push_back(spec_at_severity(sample_families(rng.next_u64(), cfg.families),
                                          (c + 0.5) / e.mos_conditions, rng.next_u64(), oc.ranges));
  }
  for (int s = 0; s < e.n_speakers; ++s) {
    std::vector<const Utterance*> mine;
    for (const auto& u : held)
      if (u.speaker_id == s) mine.push_back(&u);
    if (mine.size() < static_cast<std::size_t>(e.mos_utts_per_cell))
      throw CapacityError("MOS split: speaker " + std::to_string(s) + " has too few utterances");
    for (int c = 0; c < e.mos_conditions; ++c)
      for (int k = 0; k < e.mos_utts_per_cell; ++k) {
        const Utterance& u = *mine[static_cast<std::size_t>(k)];
        const double mag = magnitude(conditions[static_cast<std::size_t>(c)], oc.ranges, oc.weights);
        Rng rng(derive_seed(seed, {kSeedMos, 0x4a, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(c),
                                   static_cast<std::uint64_t>(k)}));
        const double rating = std::clamp(5.0 - 4.0 * mag + e.mos_rating_sigma * rng.normal(), 1.0, 5.0);
        const std::string rel = wav_rel("mos", idx_name("mos", {s, c, k}));
        clips.emplace_back(rel, apply(conditions[static_cast<std::size_t>(c)], u.clean));
        rows.push_back({{"speaker", s},
                        {"condition", c},
                        {"rating", rating},
                        {"magnitude", mag},
                        {"ref_path", wav_rel("corpus", u.id)},
                        {"path", rel}});
      }
  }
  write_jsonl(rows, root / "mos.jsonl");
  rows.clear();

  // Robustness: shift and gain against low-SNR noise on the same clip.
  for (int i = 0; i < e.robust_cases; ++i) {
    const Utterance& u = held[static_cast<std::size_t>(i) % n_held];
    const Index shift = static_cast<Index>(std::lround(kShiftSeconds * u.clean.sample_rate_hz));
    Waveform shifted = u.clean;
    shifted.samples.setZero();
    shifted.samples.tail(u.clean.size() - shift) = u.clean.samples.head(u.clean.size() - shift);
    const std::string base = idx_name("rob", {i});
    clips.emplace_back(wav_rel("robust", base + "_shift"), shifted);
    clips.emplace_back(wav_rel("robust", base + "_gain"), apply_gain_db(u.clean, e.robust_gain_db));
    clips.emplace_back(wav_rel("robust", base + "_noisy"),
                       apply_noise(u.clean, e.robust_snr_db, NoiseColor::kWhite,
                                   derive_seed(seed, {kSeedRobust, static_cast<std::uint64_t>(i)})));
    rows.push_back({{"case", i},
                    {"ref_path", wav_rel("corpus", u.id)},
                    {"shift_path", wav_rel("robust", base + "_shift")},
                    {"gain_path", wav_rel("robust", base + "_gain")},
                    {"noisy_path", wav_rel("robust", base + "_noisy")}});
  }
  write_jsonl(rows, root / "robustness.jsonl");

  write_clips(root, clips);
  json split = {{"eval", e}, {"families", family_names(cfg.families)}, {"seed", seed}};
  write_text(root / "split.json", split.dump(2) + "\n");
}

TrainConfig stage_train_config(const RunConfig& cfg) {
  TrainConfig t = cfg.train;
  t.seed = derive_seed(cfg.seed, {kSeedTrain});
  return t;
}

Model load_stage(const RunLayout& L, Stage s) {
  const fs::path p = L.checkpoint(s);
  if (!fs::exists(p))
    throw ContractError("stage checkpoint missing: " + p.string() + " (run the " + stage_name(s) + " stage first)");
  return load_checkpoint(p);
}

std::vector<json> read_split(const fs::path& eval_dir, const char* name) {
  const fs::path p = eval_dir / name;
  if (!fs::exists(p)) throw DataError("eval split missing: " + p.string());
  return read_jsonl(p);
}

std::vector<std::string> column(const std::vector<json>& rows, const char* key) {
  std::vector<std::string> out;
  for (const auto& r : rows) out.push_back(r.at(key).get<std::string>());
  return out;
}

}  // namespace

void RunConfig::resolve() {
  data.oracle.families = families;
  train.families = families;
  train.seed = seed;
}

void RunConfig::validate() const {
  if (audio.sample_rate_hz <= 0 || audio.clip_samples <= 0) throw PreconditionError("run config: bad audio format");
  if (families.empty()) throw PreconditionError("run config: no perturbation families");
  model.validate();
  train.validate();
  if (audio.clip_samples % model.encoder.downsampling() != 0)
    throw PreconditionError("run config: clip_samples must be a multiple of the encoder downsampling");
  if (data.n_utterances < 1 || data.n_speakers < 1 || data.n_jnd < 1 || data.n_triplets < 1)
    throw PreconditionError("run config: dataset sizes must be >= 1");
  if (eval.mono_levels < 3 || eval.mono_items < 2) throw PreconditionError("run config: monotonicity needs >= 3 levels, >= 2 items");
  if (eval.n_utterances < 2) throw PreconditionError("run config: eval needs >= 2 utterances");
}

void to_json(json& j, const RunConfig& c) {
  const OracleConfig& o = c.data.oracle;
  j = {{"seed", c.seed},
       {"out", c.out.string()},
       {"audio", {{"sample_rate_hz", c.audio.sample_rate_hz}, {"clip_samples", c.audio.clip_samples}}},
       {"families", family_names(c.families)},
       {"model", c.model},
       {"data",
        {{"n_utterances", c.data.n_utterances},
         {"n_speakers", c.data.n_speakers},
         {"n_jnd", c.data.n_jnd},
         {"n_triplets", c.data.n_triplets},
         {"corpus_dir", c.data.corpus_dir},
         {"jnd_threshold", o.threshold},
         {"jnd_sigma", o.noise_sigma},
         {"jnd_span", o.jnd_span},
         {"triplet_min_gap", o.triplet_min_gap}}},
       {"eval", c.eval},
       {"train", c.train}};
}

void from_json(const json& j, RunConfig& c) {
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("audio")) {
      c.audio.sample_rate_hz = j["audio"].value("sample_rate_hz", c.audio.sample_rate_hz);
      c.audio.clip_samples = j["audio"].value("clip_samples", c.audio.clip_samples);
    }
    if (j.contains("families")) c.families = families_from(j.at("families"));
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("data")) {
      const json& d = j.at("data");
      c.data.n_utterances = d.value("n_utterances", c.data.n_utterances);
      c.data.n_speakers = d.value("n_speakers", c.data.n_speakers);
      c.data.n_jnd = d.value("n_jnd", c.data.n_jnd);
      c.data.n_triplets = d.value("n_triplets", c.data.n_triplets);
      c.data.corpus_dir = d.value("corpus_dir", c.data.corpus_dir);
      c.data.oracle.threshold = d.value("jnd_threshold", c.data.oracle.threshold);
      c.data.oracle.noise_sigma = d.value("jnd_sigma", c.data.oracle.noise_sigma);
      c.data.oracle.jnd_span = d.value("jnd_span", c.data.oracle.jnd_span);
      c.data.oracle.triplet_min_gap = d.value("triplet_min_gap", c.data.oracle.triplet_min_gap);
    }
    if (j.contains("eval")) {
      EvalConfig e = c.eval;
      nlohmann::from_json(j.at("eval"), e);
      c.eval = e;
    }
    if (j.contains("train")) {
      TrainConfig t = c.train;
      from_json(j.at("train"), t);
      c.train = t;
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed run config: ") + e.what());
  }
  c.resolve();
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw DataError("config " + path.string() + ": " + e.what());
  }
  RunConfig c;
  from_json(j, c);
  return c;
}

void write_run_manifest(const RunConfig& cfg, const std::string& command) {
  const RunLayout L{cfg.out};
  json m = {{"command", command}, {"config", cfg}};
  write_text(L.manifest(command), m.dump(2) + "\n");
}

void run_synth_data(const RunConfig& cfg) {
  cfg.validate();
  const RunLayout L{cfg.out};
  fs::create_directories(L.root);
  std::vector<Utterance> corpus =
      cfg.data.corpus_dir.empty()
          ? synth_corpus(cfg.data.n_utterances, cfg.data.n_speakers, derive_seed(cfg.seed, {kSeedCorpus}), cfg.audio)
          : load_corpus_dir(cfg.data.corpus_dir, cfg.audio);
  corpus = store_corpus(corpus, L.root, "corpus", cfg.audio);

  auto jnd = oracle_jnd(corpus, cfg.data.n_jnd, cfg.data.oracle, derive_seed(cfg.seed, {kSeedJnd}));
  store_records(jnd, corpus, L.root, "corpus", "jnd");
  write_manifest(jnd, L.jnd_manifest());

  auto triplets = oracle_triplets(corpus, cfg.data.n_triplets, cfg.data.oracle, derive_seed(cfg.seed, {kSeedTriplets}));
  store_records(triplets, corpus, L.root, "corpus", "triplets");
  write_manifest(triplets, L.triplet_manifest());

  synth_eval_split(cfg, L.eval_dir());
  write_run_manifest(cfg, "synth-data");
}

std::vector<Utterance> load_corpus(const RunConfig& cfg) {
  return read_corpus_index(cfg.out, "corpus", cfg.audio);
}

Model run_pretrain(const RunConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const RunLayout L{cfg.out};
  const auto corpus = load_corpus(cfg);
  Model model(cfg.model, derive_seed(cfg.seed, {kSeedModel}));
  model.metadata()["audio"] = {{"sample_rate_hz", cfg.audio.sample_rate_hz},
                               {"clip_samples", cfg.audio.clip_samples}};
  save_checkpoint(model, L.checkpoint(Stage::kInit));
  const auto log = pretrain_contrastive(stage_train_config(cfg), corpus, model, on_epoch);
  save_checkpoint(model, L.checkpoint(Stage::kPretrained));
  write_progress_csv(log, L.log(TrainStage::kPretrain));
  write_run_manifest(cfg, "pretrain");
  return model;
}

Model run_train_jnd(const RunConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const RunLayout L{cfg.out};
  Model model = load_stage(L, Stage::kPretrained);
  if (!fs::exists(L.jnd_manifest())) throw DataError("JND manifest missing: " + L.jnd_manifest().string());
  const auto records = read_manifest(L.jnd_manifest());
  ClipStore clips;
  clips.load_records(records, L.root, cfg.audio.sample_rate_hz, cfg.audio.clip_samples);
  const auto log = train_jnd(stage_train_config(cfg), records, clips, model, on_epoch);
  save_checkpoint(model, L.checkpoint(Stage::kJnd));
  write_progress_csv(log, L.log(TrainStage::kJnd));
  write_run_manifest(cfg, "train-jnd");
  return model;
}

Model run_finetune(const RunConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const RunLayout L{cfg.out};
  Model model = load_stage(L, Stage::kJnd);
  if (!fs::exists(L.triplet_manifest()))
    throw DataError("triplet manifest missing: " + L.triplet_manifest().string());
  const auto records = read_manifest(L.triplet_manifest());
  ClipStore clips;
  clips.load_records(records, L.root, cfg.audio.sample_rate_hz, cfg.audio.clip_samples);
  const auto log = finetune_triplet(stage_train_config(cfg), records, clips, model, on_epoch);
  save_checkpoint(model, L.checkpoint(Stage::kFinetuned));
  write_progress_csv(log, L.log(TrainStage::kFinetune));
  write_run_manifest(cfg, "finetune");
  return model;
}

void EmbeddingCache::prepare(const std::vector<std::string>& paths) {
  std::vector<std::string> todo;
  std::set<std::string> seen;
  for (const auto& p : paths)
    if (!table_.count(p) && seen.insert(p).second) todo.push_back(p);
  if (todo.empty()) return;
  std::vector<Waveform> w(todo.size());
  parallel_for(todo.size(), [&](std::size_t i) { w[i] = to_canonical(read_wav(root_ / todo[i]), rate_, samples_); });
  const Tensor emb = model_.embed_waveforms(w);
  auto m = emb.matrix(static_cast<Index>(todo.size()));
  for (std::size_t i = 0; i < todo.size(); ++i) table_[todo[i]] = m.row(static_cast<Index>(i)).transpose();
}

const Eigen::VectorXd& EmbeddingCache::embedding(const std::string& path) const {
  auto it = table_.find(path);
  if (it == table_.end()) throw DataError("clip not embedded: " + path);
  return it->second;
}

Eigen::VectorXd EmbeddingCache::acoustic(const std::string& path) const {
  return embedding(path).head(model_.config().encoder.acoustic_dim);
}

std::vector<double> EmbeddingCache::distances(const std::vector<std::string>& refs,
                                              const std::vector<std::string>& pers) {
  if (refs.size() != pers.size()) throw PreconditionError("distances: length mismatch");
  std::vector<std::string> all = refs;
  all.insert(all.end(), pers.begin(), pers.end());
  prepare(all);
  const Index a = model_.config().encoder.acoustic_dim;
  const auto n = static_cast<Index>(refs.size());
  Tensor r({n, a}), p({n, a});
  for (Index i = 0; i < n; ++i) {
    r.matrix(n).row(i) = acoustic(refs[static_cast<std::size_t>(i)]).transpose();
    p.matrix(n).row(i) = acoustic(pers[static_cast<std::size_t>(i)]).transpose();
  }
  const Eigen::VectorXd d = model_.distance_from_acoustic(r, p);
  return {d.data(), d.data() + d.size()};
}

std::vector<EvalReport> run_eval(const Model& model, const fs::path& eval_dir, const RunConfig& cfg,
                                 const std::set<std::string>& metrics) {
  for (const auto& m : metrics)
    if (std::find(kEvalMetrics.begin(), kEvalMetrics.end(), m) == kEvalMetrics.end())
      throw DataError("unknown metric: " + m);
  if (!fs::is_directory(eval_dir)) throw DataError("eval split missing: " + eval_dir.string());
  EmbeddingCache cache(model, eval_dir, cfg.audio.sample_rate_hz, cfg.audio.clip_samples);
  const json echo = {{"stage", stage_name(model.stage())}, {"eval", cfg.eval}};
  std::vector<EvalReport> out;
  auto want = [&](const char* m) { return metrics.empty() || metrics.count(m) > 0; };

  if (want("2afc")) {
    const fs::path p = eval_dir / "triplets.jsonl";
    if (!fs::exists(p)) throw DataError("eval split missing: " + p.string());
    const auto trip = read_manifest(p);
    std::vector<std::string> refs, as, bs;
    std::vector<int> pref;
    for (const auto& t : trip) {
      refs.push_back(t.ref_path);
      as.push_back(t.a_path);
      bs.push_back(t.b_path);
      pref.push_back(t.label);
    }
    const auto da = cache.distances(refs, as), db = cache.distances(refs, bs);
    EvalReport r{"2afc", two_afc(da, db, pref), trip.size(), echo};
    for (std::size_t i = 0; i < trip.size(); ++i)
      r.breakdown.push_back({{"a_id", trip[i].a_id}, {"d_a", da[i]}, {"d_b", db[i]}, {"preferred", pref[i] ? "B" : "A"}});
    out.push_back(std::move(r));
  }

  if (want("common_area")) {
    const auto rows = read_split(eval_dir, "common_area.jsonl");
    const auto d = cache.distances(column(rows, "a_path"), column(rows, "b_path"));
    std::vector<double> same, diff;
    for (std::size_t i = 0; i < rows.size(); ++i) (rows[i].at("group") == "same" ? same : diff).push_back(d[i]);
    EvalReport r{"common_area", common_area(same, diff, cfg.eval.bins), rows.size(), echo};
    for (std::size_t i = 0; i < rows.size(); ++i) r.breakdown.push_back({{"group", rows[i].at("group")}, {"distance", d[i]}});
    out.push_back(std::move(r));
  }

  if (want("monotonicity")) {
    const auto rows = read_split(eval_dir, "monotonicity.jsonl");
    const auto d = cache.distances(column(rows, "ref_path"), column(rows, "path"));
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_series;
    std::vector<std::string> order;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::string s = rows[i].at("series").get<std::string>();
      if (!by_series.count(s)) order.push_back(s);
      by_series[s].first.push_back(d[i]);
      by_series[s].second.push_back(rows[i].at("level").get<double>());
    }
    EvalReport r{"monotonicity", 0.0, rows.size(), echo};
    double sum = 0.0;
    for (const auto& s : order) {
      const double rho = monotonicity(by_series[s].first, by_series[s].second);
      sum += rho;
      r.breakdown.push_back({{"series", s}, {"rho", rho}, {"n", by_series[s].first.size()}});
    }
    r.value = sum / static_cast<double>(order.size());
    out.push_back(std::move(r));
  }

  if (want("precision_at_k")) {
    const auto rows = read_split(eval_dir, "retrieval.jsonl");
    const auto paths = column(rows, "path");
    cache.prepare(paths);
    const Index a = model.config().encoder.acoustic_dim;
    Eigen::MatrixXd emb(static_cast<Index>(rows.size()), a);
    std::vector<int> labels;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      emb.row(static_cast<Index>(i)) = cache.acoustic(paths[i]).transpose();
      labels.push_back(rows[i].at("group").get<int>());
    }
    const int k = cfg.eval.retrieval_k;
    EvalReport r{"precision_at_k", precision_at_k(emb, labels, k), rows.size(), echo};
    std::map<int, int> sizes;
    for (int l : labels) ++sizes[l];
    double chance = 0.0;
    for (const auto& [l, c] : sizes) chance += static_cast<double>(c) * (c - 1) / (rows.size() - 1);
    chance /= static_cast<double>(rows.size());
    r.breakdown.push_back({{"k", k}, {"value", r.value}, {"chance", chance}});
    for (int kk : {10, 20})
      if (kk != k && static_cast<std::size_t>(kk) < rows.size())
        r.breakdown.push_back({{"k", kk}, {"value", precision_at_k(emb, labels, kk)}, {"chance", chance}});
    out.push_back(std::move(r));
  }

  if (want("mos")) {
    const auto rows = read_split(eval_dir, "mos.jsonl");
    const auto d = cache.distances(column(rows, "ref_path"), column(rows, "path"));
    std::vector<double> ratings;
    std::vector<int> spk, cond;
    for (const auto& row : rows) {
      ratings.push_back(row.at("rating").get<double>());
      spk.push_back(row.at("speaker").get<int>());
      cond.push_back(row.at("condition").get<int>());
    }
    const MosResult m = mos_correlation(d, ratings, spk, cond);
    EvalReport r{"mos", m.rho, rows.size(), echo};
    for (const auto& c : m.cells)
      r.breakdown.push_back({{"speaker", c.speaker},
                             {"condition", c.condition},
                             {"distance", c.mean_distance},
                             {"rating", c.mean_rating},
                             {"count", c.count}});
    out.push_back(std::move(r));
  }

  if (want("robustness")) {
    const auto rows = read_split(eval_dir, "robustness.jsonl");
    const auto refs = column(rows, "ref_path");
    const auto ds = cache.distances(refs, column(rows, "shift_path"));
    const auto dg = cache.distances(refs, column(rows, "gain_path"));
    const auto dn = cache.distances(refs, column(rows, "noisy_path"));
    std::size_t shift_ok = 0, gain_ok = 0, both = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      shift_ok += ds[i] < dn[i];
      gain_ok += dg[i] < dn[i];
      both += ds[i] < dn[i] && dg[i] < dn[i];
    }
    const double n = static_cast<double>(rows.size());
    EvalReport r{"robustness", both / n, rows.size(), echo};
    r.breakdown.push_back({{"check", "shift"}, {"fraction", shift_ok / n}});
    r.breakdown.push_back({{"check", "gain"}, {"fraction", gain_ok / n}});
    out.push_back(std::move(r));
  }
  return out;
}

void write_eval_outputs(const std::vector<EvalReport>& reports, const fs::path& dir) {
  write_reports(reports, dir);
  for (const auto& r : reports)
    if (r.metric == "common_area") {
      std::vector<double> same, diff;
      for (const auto& row : r.breakdown)
        (row.at("group") == "same" ? same : diff).push_back(row.at("distance").get<double>());
      const int bins = r.config.contains("eval") ? r.config["eval"].value("bins", kCommonAreaBins) : kCommonAreaBins;
      write_histogram_svg(same, diff, bins, dir / "common_area.svg");
    }
}

}  // namespace cdpam
