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

#include "cdpam/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "cdpam/error.hpp"
#include "cdpam/losses.hpp"
#include "cdpam/parallel.hpp"
#include "cdpam/rng.hpp"

namespace cdpam {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t id_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void clear_grads(const std::vector<Parameter*>& ps) {
  for (Parameter* p : ps)
    if (p->grad.size() > 0) p->grad.values().setZero();
}

std::vector<Parameter*> concat(std::vector<Parameter*> a, const std::vector<Parameter*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

void step(const std::vector<Parameter*>& ps, AdamState& st) {
  adam_step(std::span<Parameter* const>(ps.data(), ps.size()), st);
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

void require_stage(const Model& model, Stage want, const char* what) {
  if (model.stage() != want)
    throw ContractError(std::string(what) + " requires a " + stage_name(want) + " checkpoint, got " +
                        stage_name(model.stage()));
}

Tensor rows_of(const Tensor& table, const std::vector<Index>& rows) {
  const Index d = table.shape()[1];
  Tensor out({static_cast<Index>(rows.size()), d});
  auto src = table.matrix(table.shape()[0]);
  auto dst = out.matrix(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) dst.row(static_cast<Index>(i)) = src.row(rows[i]);
  return out;
}

Tensor acoustic_of(const Model& model, const Tensor& emb) {
  const Index n = emb.shape()[0];
  const Index a = model.config().encoder.acoustic_dim;
  Tensor out({n, a});
  out.matrix(n) = emb.matrix(n).leftCols(a);
  return out;
}

// Acoustic vectors of augmented clip variants for the frozen-encoder stages.
// Row lookup: slot(clip, variant).
class AcousticCache {
 public:
  AcousticCache(const Model& model, const TrainConfig& cfg, const ClipStore& clips,
                const std::vector<std::string>& ids, std::uint64_t seed)
      : model_(model), cfg_(cfg), clips_(clips), seed_(seed) {
    for (const auto& id : ids)
      if (!index_.count(id)) {
        index_[id] = static_cast<Index>(ids_.size());
        ids_.push_back(id);
      }
    variants_ = cfg.augment ? std::max(cfg.augment_pool, 0) : 1;
    if (variants_ > 0) table_ = embed_variants(variants_, [&](std::size_t c, int v) {
                         return derive_seed(seed_, {0x9001, id_hash(ids_[c]), static_cast<std::uint64_t>(v)});
                       });
  }

  bool pooled() const { return variants_ > 0; }

  // Acoustic rows for (clip, draw key) requests of one epoch.
  Tensor fetch(const std::vector<std::string>& ids, const std::vector<std::uint64_t>& keys) {
    std::vector<Index> rows(ids.size());
    if (pooled()) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const Index c = index_.at(ids[i]);
        const auto v = variants_ == 1 ? 0 : static_cast<Index>(Rng(keys[i]).below(variants_));
        rows[i] = c * variants_ + v;
      }
      return rows_of(table_, rows);
    }
    std::vector<Waveform> w(ids.size());
    parallel_for(ids.size(), [&](std::size_t i) { w[i] = augment_online(clips_.at(ids[i]), keys[i], true); });
    return acoustic_of(model_, model_.embed_waveforms(w));
  }

 private:
  template <class SeedFn>
  Tensor embed_variants(int variants, SeedFn seed_of) {
    std::vector<Waveform> w(ids_.size() * static_cast<std::size_t>(variants));
    parallel_for(w.size(), [&](std::size_t k) {
      const std::size_t c = k / static_cast<std::size_t>(variants);
      const int v = static_cast<int>(k % static_cast<std::size_t>(variants));
      w[k] = augment_online(clips_.at(ids_[c]), seed_of(c, v), cfg_.augment);
    });
    return acoustic_of(model_, model_.embed_waveforms(w));
  }

  const Model& model_;
  const TrainConfig& cfg_;
  const ClipStore& clips_;
  std::uint64_t seed_;
  std::map<std::string, Index> index_;
  std::vector<std::string> ids_;
  int variants_ = 0;
  Tensor table_;
};

// Embeds a batch of clips through the graph when the encoder is trainable.
Var embed_recorded(Graph& g, Model& model, const ClipStore& clips, const std::vector<std::string>& ids,
                   const std::vector<std::uint64_t>& keys, bool augment) {
  std::vector<Waveform> w(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) w[i] = augment_online(clips.at(ids[i]), keys[i], augment);
  return model.acoustic(model.embed(g, g.constant(Model::batch_from(w)), true));
}

void check_loss(double loss, int epoch, const char* stage) {
  if (!std::isfinite(loss)) throw TrainingError(std::string(stage) + ": non-finite loss", epoch);
}

template <class F>
void guard_epoch(int epoch, const char* stage, F&& body) {
  try {
    body();
  } catch (const NumericError& e) {
    throw TrainingError(std::string(stage) + ": " + e.what(), epoch);
  }
}

std::vector<std::string> clip_ids(const std::vector<JudgmentRecord>& records) {
  std::vector<std::string> ids;
  for (const auto& r : records) {
    ids.push_back(r.ref_id);
    ids.push_back(r.a_id);
    if (r.kind == JudgmentKind::kTriplet) ids.push_back(r.b_id);
  }
  return ids;
}

json log_json(const std::vector<EpochLog>& log) {
  json loss = json::array(), acc = json::array();
  for (const auto& e : log) {
    loss.push_back(e.loss);
    if (e.accuracy >= 0.0) acc.push_back(e.accuracy);
  }
  json j = {{"loss", loss}};
  if (!acc.empty()) j["accuracy"] = acc;
  return j;
}

void record_stage(Model& model, TrainStage stage, const TrainConfig& cfg, const std::vector<EpochLog>& log,
                  std::size_t n_items) {
  json& m = model.metadata();
  if (!m.is_object()) m = json::object();
  json entry = log_json(log);
  entry["config"] = cfg;
  entry["n_items"] = n_items;
  m["training"][train_stage_name(stage)] = entry;
}

}  // namespace

std::string train_stage_name(TrainStage s) {
  switch (s) {
    case TrainStage::kPretrain: return "pretrain";
    case TrainStage::kJnd: return "jnd";
    case TrainStage::kFinetune: return "finetune";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw PreconditionError("train config: batch_size must be >= 1");
  if (!(lr > 0.0)) throw PreconditionError("train config: lr must be > 0");
  if (epochs.pretrain < 1 || epochs.jnd < 1 || epochs.finetune < 1)
    throw PreconditionError("train config: epochs must be >= 1");
  if (!(tau > 0.0)) throw PreconditionError("train config: tau must be > 0");
  if (margin < 0.0) throw PreconditionError("train config: margin must be >= 0");
  if (augment_pool < 0) throw PreconditionError("train config: augment_pool must be >= 0");
  if (families.empty()) throw PreconditionError("train config: no perturbation families");
}

void to_json(json& j, const TrainConfig& c) {
  std::vector<std::string> fams;
  for (Family f : c.families) fams.push_back(family_name(f));
  j = {{"batch_size", c.batch_size},
       {"lr", c.lr},
       {"epochs", {{"pretrain", c.epochs.pretrain}, {"jnd", c.epochs.jnd}, {"finetune", c.epochs.finetune}}},
       {"tau", c.tau},
       {"margin", c.margin},
       {"seed", c.seed},
       {"augment", c.augment},
       {"encoder_frozen_in_jnd", c.encoder_frozen_in_jnd},
       {"augment_pool", c.augment_pool},
       {"families", fams}};
}

void from_json(const json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  if (j.contains("epochs")) {
    const json& e = j.at("epochs");
    c.epochs.pretrain = e.value("pretrain", c.epochs.pretrain);
    c.epochs.jnd = e.value("jnd", c.epochs.jnd);
    c.epochs.finetune = e.value("finetune", c.epochs.finetune);
  }
  c.tau = j.value("tau", c.tau);
  c.margin = j.value("margin", c.margin);
  c.seed = j.value("seed", c.seed);
  c.augment = j.value("augment", c.augment);
  c.encoder_frozen_in_jnd = j.value("encoder_frozen_in_jnd", c.encoder_frozen_in_jnd);
  c.augment_pool = j.value("augment_pool", c.augment_pool);
  if (j.contains("families")) {
    c.families.clear();
    for (const auto& f : j.at("families")) c.families.push_back(family_from_name(f.get<std::string>()));
  }
}

Waveform augment_online(const Waveform& w, std::uint64_t seed, bool enabled) {
  if (!enabled) return w;
  Rng rng(seed);
  const Index n = w.size();
  const Index shift = std::min(n, static_cast<Index>(std::lround(kShiftSeconds * w.sample_rate_hz)));
  Waveform out;
  out.sample_rate_hz = w.sample_rate_hz;
  out.samples = Eigen::VectorXd::Zero(n);
  if (rng.bernoulli(0.5))
    out.samples.tail(n - shift) = w.samples.head(n - shift);  // prepend silence
  else
    out.samples.head(n - shift) = w.samples.tail(n - shift);  // append silence, trim the start
  out.samples *= db_to_amplitude(rng.uniform(kGainMinDb, kGainMaxDb));
  return out;
}

void ClipStore::add(const std::string& id, Waveform w) { clips_[id] = std::move(w); }

const Waveform& ClipStore::at(const std::string& id) const {
  auto it = clips_.find(id);
  if (it == clips_.end()) throw DataError("clip not loaded: " + id);
  return it->second;
}

void ClipStore::load_records(const std::vector<JudgmentRecord>& records, const std::filesystem::path& root,
                             int sample_rate_hz, Index clip_samples) {
  std::vector<std::pair<std::string, std::filesystem::path>> todo;
  std::set<std::string> seen;
  auto want = [&](const std::string& id, const std::string& rel) {
    if (id.empty() || clips_.count(id) || seen.count(id)) return;
    if (rel.empty()) throw DataError("record has no path for clip " + id);
    seen.insert(id);
    todo.emplace_back(id, root / rel);
  };
  for (const auto& r : records) {
    want(r.ref_id, r.ref_path);
    want(r.a_id, r.a_path);
    if (r.kind == JudgmentKind::kTriplet) want(r.b_id, r.b_path);
  }
  std::vector<Waveform> loaded(todo.size());
  parallel_for(todo.size(), [&](std::size_t i) {
    loaded[i] = to_canonical(read_wav(todo[i].second), sample_rate_hz, clip_samples);
  });
  for (std::size_t i = 0; i < todo.size(); ++i) clips_[todo[i].first] = std::move(loaded[i]);
}

std::vector<EpochLog> pretrain_contrastive(const TrainConfig& cfg, const std::vector<Utterance>& corpus,
                                           Model& model, const EpochCallback& on_epoch) {
  cfg.validate();
  if (corpus.empty()) throw DataError("pretrain: empty corpus");
  tune_allocator();
  const std::size_t B = cfg.batch_size;
  // One epoch: enough acoustic-mode batches to cover the corpus once, each
  // followed by a content-mode batch.
  const std::size_t per_mode = std::max<std::size_t>(1, (corpus.size() + 2 * B - 1) / (2 * B));

  const auto enc = model.params().trainable("encoder.");
  const auto head_a = model.params().trainable("projection.acoustic.");
  const auto head_c = model.params().trainable("projection.content.");
  AdamConfig ac;
  ac.lr = cfg.lr;
  AdamState st_enc{ac}, st_a{ac}, st_c{ac};
  const auto all = concat(concat(enc, head_a), head_c);

  std::vector<EpochLog> log;
  for (int epoch = 1; epoch <= cfg.epochs.pretrain; ++epoch) {
    const auto t0 = Clock::now();
    double total = 0.0;
    guard_epoch(epoch, "pretrain", [&] {
      for (std::size_t b = 0; b < 2 * per_mode; ++b) {
        const bool acoustic = b % 2 == 0;
        const std::uint64_t bseed = derive_seed(cfg.seed, {0xa1, static_cast<std::uint64_t>(epoch), b});
        ContrastivePairs pairs = make_contrastive_batch(
            corpus, acoustic ? PairMode::kAcoustic : PairMode::kContent, B, bseed, cfg.families, cfg.ranges);
        std::vector<Waveform> views(2 * B);
        parallel_for(2 * B, [&](std::size_t k) {
          const Waveform& src = k < B ? pairs.views_i[k] : pairs.views_j[k - B];
          views[k] = augment_online(src, derive_seed(bseed, {0xa2, k}), cfg.augment);
        });

        clear_grads(all);
        Graph g;
        Var emb = model.embed(g, g.constant(Model::batch_from(views)), true);
        Var half = acoustic ? model.acoustic(emb) : model.content(emb);
        Var z = model.project(g, half, acoustic ? Half::kAcoustic : Half::kContent);
        Var loss = nt_xent(z, cfg.tau);
        const double l = g.value(loss).item();
        check_loss(l, epoch, "pretrain");
        g.backward(loss);
        step(enc, st_enc);
        if (acoustic)
          step(head_a, st_a);
        else
          step(head_c, st_c);
        total += l;
      }
    });
    EpochLog e{TrainStage::kPretrain, epoch, total / static_cast<double>(2 * per_mode), -1.0, ms_since(t0)};
    check_loss(e.loss, epoch, "pretrain");
    log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  model.set_stage(Stage::kPretrained);
  record_stage(model, TrainStage::kPretrain, cfg, log, corpus.size());
  return log;
}

std::vector<EpochLog> train_jnd(const TrainConfig& cfg, const std::vector<JudgmentRecord>& records,
                                const ClipStore& clips, Model& model, const EpochCallback& on_epoch) {
  cfg.validate();
  require_stage(model, Stage::kPretrained, "train_jnd");
  if (records.empty()) throw DataError("train_jnd: empty manifest");
  for (const auto& r : records)
    if (r.kind != JudgmentKind::kJndPair) throw DataError("train_jnd: manifest contains non-JND records");

  const bool frozen = cfg.encoder_frozen_in_jnd;
  auto ps = concat(model.params().trainable("lossnet."), model.params().trainable("classifier."));
  if (!frozen) ps = concat(ps, model.params().trainable("encoder."));
  AdamConfig ac;
  ac.lr = cfg.lr;
  AdamState st{ac};

  const std::uint64_t seed = derive_seed(cfg.seed, {0xb0});
  std::optional<AcousticCache> cache;
  if (frozen) cache.emplace(model, cfg, clips, clip_ids(records), seed);

  std::vector<EpochLog> log;
  for (int epoch = 1; epoch <= cfg.epochs.jnd; ++epoch) {
    const auto t0 = Clock::now();
    double total = 0.0;
    std::size_t correct = 0, batches = 0;
    guard_epoch(epoch, "jnd", [&] {
      const auto order = shuffled(records.size(), derive_seed(seed, {0xb1, static_cast<std::uint64_t>(epoch)}));
      for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
        const std::size_t n = std::min(cfg.batch_size, order.size() - s);
        std::vector<std::string> ref_ids, per_ids;
        std::vector<std::uint64_t> ref_keys, per_keys;
        Tensor labels({static_cast<Index>(n)});
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t r = order[s + k];
          ref_ids.push_back(records[r].ref_id);
          per_ids.push_back(records[r].a_id);
          ref_keys.push_back(derive_seed(seed, {0xb2, static_cast<std::uint64_t>(epoch), r, 0}));
          per_keys.push_back(derive_seed(seed, {0xb2, static_cast<std::uint64_t>(epoch), r, 1}));
          labels.values()[static_cast<Index>(k)] = records[r].label;
        }
        clear_grads(ps);
        Graph g;
        Var a_ref, a_per;
        if (frozen) {
          a_ref = g.constant(cache->fetch(ref_ids, ref_keys));
          a_per = g.constant(cache->fetch(per_ids, per_keys));
        } else {
          a_ref = embed_recorded(g, model, clips, ref_ids, ref_keys, cfg.augment);
          a_per = embed_recorded(g, model, clips, per_ids, per_keys, cfg.augment);
        }
        Var p = model.judge(g, model.distance(g, a_ref, a_per));
        Var loss = bce(p, labels);
        const double l = g.value(loss).item();
        check_loss(l, epoch, "jnd");
        g.backward(loss);
        step(ps, st);
        total += l;
        ++batches;
        const auto& pv = g.value(p).values();
        for (std::size_t k = 0; k < n; ++k)
          correct += (pv[static_cast<Index>(k)] > 0.5) == (labels.values()[static_cast<Index>(k)] > 0.5);
      }
    });
    EpochLog e{TrainStage::kJnd, epoch, total / static_cast<double>(batches),
               static_cast<double>(correct) / static_cast<double>(records.size()), ms_since(t0)};
    log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  model.set_stage(Stage::kJnd);
  record_stage(model, TrainStage::kJnd, cfg, log, records.size());
  return log;
}

std::vector<EpochLog> finetune_triplet(const TrainConfig& cfg, const std::vector<JudgmentRecord>& records,
                                       const ClipStore& clips, Model& model, const EpochCallback& on_epoch) {
  cfg.validate();
  require_stage(model, Stage::kJnd, "finetune_triplet");
  if (records.empty()) throw DataError("finetune_triplet: empty manifest");
  for (const auto& r : records)
    if (r.kind != JudgmentKind::kTriplet) throw DataError("finetune_triplet: manifest contains non-triplet records");

  const auto ps = model.params().trainable("lossnet.");
  AdamConfig ac;
  ac.lr = cfg.lr;
  AdamState st{ac};
  const std::uint64_t seed = derive_seed(cfg.seed, {0xc0});
  AcousticCache cache(model, cfg, clips, clip_ids(records), seed);

  std::vector<EpochLog> log;
  for (int epoch = 1; epoch <= cfg.epochs.finetune; ++epoch) {
    const auto t0 = Clock::now();
    double total = 0.0;
    std::size_t correct = 0, batches = 0;
    guard_epoch(epoch, "finetune", [&] {
      const auto order = shuffled(records.size(), derive_seed(seed, {0xc1, static_cast<std::uint64_t>(epoch)}));
      for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
        const std::size_t n = std::min(cfg.batch_size, order.size() - s);
        std::vector<std::string> ref_ids, pref_ids, other_ids;
        std::vector<std::uint64_t> k0, k1, k2;
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t r = order[s + k];
          const JudgmentRecord& rec = records[r];
          ref_ids.push_back(rec.ref_id);
          pref_ids.push_back(rec.prefers_a() ? rec.a_id : rec.b_id);
          other_ids.push_back(rec.prefers_a() ? rec.b_id : rec.a_id);
          const auto e = static_cast<std::uint64_t>(epoch);
          k0.push_back(derive_seed(seed, {0xc2, e, r, 0}));
          k1.push_back(derive_seed(seed, {0xc2, e, r, 1}));
          k2.push_back(derive_seed(seed, {0xc2, e, r, 2}));
        }
        clear_grads(ps);
        Graph g;
        Var ref = g.constant(cache.fetch(ref_ids, k0));
        Var d_pref = model.distance(g, ref, g.constant(cache.fetch(pref_ids, k1)));
        Var d_other = model.distance(g, ref, g.constant(cache.fetch(other_ids, k2)));
        Var loss = margin_rank(d_pref, d_other, cfg.margin);
        const double l = g.value(loss).item();
        check_loss(l, epoch, "finetune");
        g.backward(loss);
        step(ps, st);
        total += l;
        ++batches;
        const auto& a = g.value(d_pref).values();
        const auto& b = g.value(d_other).values();
        for (std::size_t k = 0; k < n; ++k) correct += a[static_cast<Index>(k)] < b[static_cast<Index>(k)];
      }
    });
    EpochLog e{TrainStage::kFinetune, epoch, total / static_cast<double>(batches),
               static_cast<double>(correct) / static_cast<double>(records.size()), ms_since(t0)};
    log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  model.set_stage(Stage::kFinetuned);
  record_stage(model, TrainStage::kFinetune, cfg, log, records.size());
  return log;
}

namespace {

// Un-augmented acoustic vectors keyed by clip id.
std::map<std::string, Eigen::VectorXd> embed_clean(const Model& model, const std::vector<std::string>& ids,
                                                   const ClipStore& clips) {
  std::vector<std::string> uniq;
  std::set<std::string> seen;
  for (const auto& id : ids)
    if (seen.insert(id).second) uniq.push_back(id);
  std::vector<Waveform> w;
  for (const auto& id : uniq) w.push_back(clips.at(id));
  const Tensor a = acoustic_of(model, model.embed_waveforms(w));
  std::map<std::string, Eigen::VectorXd> out;
  auto m = a.matrix(static_cast<Index>(uniq.size()));
  for (std::size_t i = 0; i < uniq.size(); ++i) out[uniq[i]] = m.row(static_cast<Index>(i)).transpose();
  return out;
}

Tensor stack(const std::map<std::string, Eigen::VectorXd>& table, const std::vector<std::string>& ids, Index d) {
  Tensor out({static_cast<Index>(ids.size()), d});
  auto m = out.matrix(static_cast<Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) m.row(static_cast<Index>(i)) = table.at(ids[i]).transpose();
  return out;
}

}  // namespace

double jnd_accuracy(const Model& model, const std::vector<JudgmentRecord>& records, const ClipStore& clips) {
  if (records.empty()) throw DataError("jnd_accuracy: no records");
  const auto table = embed_clean(model, clip_ids(records), clips);
  const Index d = model.config().encoder.acoustic_dim;
  std::vector<std::string> refs, pers;
  for (const auto& r : records) {
    refs.push_back(r.ref_id);
    pers.push_back(r.a_id);
  }
  const Eigen::VectorXd dist = model.distance_from_acoustic(stack(table, refs, d), stack(table, pers, d));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < records.size(); ++i)
    correct += (model.judge(dist[static_cast<Index>(i)]) > 0.5) == records[i].different();
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

double triplet_accuracy(const Model& model, const std::vector<JudgmentRecord>& records, const ClipStore& clips) {
  if (records.empty()) throw DataError("triplet_accuracy: no records");
  const auto table = embed_clean(model, clip_ids(records), clips);
  const Index d = model.config().encoder.acoustic_dim;
  std::vector<std::string> refs, pref, other;
  for (const auto& r : records) {
    refs.push_back(r.ref_id);
    pref.push_back(r.prefers_a() ? r.a_id : r.b_id);
    other.push_back(r.prefers_a() ? r.b_id : r.a_id);
  }
  const Tensor ref = stack(table, refs, d);
  const Eigen::VectorXd dp = model.distance_from_acoustic(ref, stack(table, pref, d));
  const Eigen::VectorXd dn = model.distance_from_acoustic(ref, stack(table, other, d));
  return static_cast<double>((dp.array() < dn.array()).count()) / static_cast<double>(records.size());
}

void write_progress_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "epoch,stage,loss,wall_ms\n";
  char buf[128];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.9g,%.1f\n", e.epoch, train_stage_name(e.stage).c_str(), e.loss,
                  e.wall_ms);
    f << buf;
  }
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace cdpam
