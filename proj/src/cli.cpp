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

#include "cdpam/cli.hpp"

#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cdpam/error.hpp"
#include "cdpam/parallel.hpp"
#include "cdpam/pipeline.hpp"

namespace cdpam {
namespace {

using nlohmann::json;

struct Common {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int epochs = 0;
  bool json_mode = false;
};

void add_common(CLI::App* sub, Common& c, bool with_epochs) {
  sub->add_option("--config", c.config, "JSON run config")->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "Run directory");
  sub->add_option("--seed", c.seed, "Run seed");
  if (with_epochs) sub->add_option("--epochs", c.epochs, "Epochs for this stage")->check(CLI::PositiveNumber);
  sub->add_flag("--json", c.json_mode, "Machine-readable output");
}

RunConfig resolve(const Common& c, CLI::App* sub, TrainStage* stage = nullptr) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (sub->count("--seed")) cfg.seed = c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  if (stage && c.epochs > 0) {
    switch (*stage) {
      case TrainStage::kPretrain: cfg.train.epochs.pretrain = c.epochs; break;
      case TrainStage::kJnd: cfg.train.epochs.jnd = c.epochs; break;
      case TrainStage::kFinetune: cfg.train.epochs.finetune = c.epochs; break;
    }
  }
  cfg.resolve();
  return cfg;
}

EpochCallback progress(std::ostream& out, bool json_mode) {
  return [&out, json_mode](const EpochLog& e) {
    if (json_mode) {
      json j = {{"stage", train_stage_name(e.stage)}, {"epoch", e.epoch}, {"loss", e.loss}, {"wall_ms", e.wall_ms}};
      if (e.accuracy >= 0.0) j["accuracy"] = e.accuracy;
      out << j.dump() << '\n';
    } else {
      char buf[160];
      if (e.accuracy >= 0.0)
        std::snprintf(buf, sizeof(buf), "%s epoch %d loss %.6f acc %.4f (%.0f ms)\n", train_stage_name(e.stage).c_str(),
                      e.epoch, e.loss, e.accuracy, e.wall_ms);
      else
        std::snprintf(buf, sizeof(buf), "%s epoch %d loss %.6f (%.0f ms)\n", train_stage_name(e.stage).c_str(),
                      e.epoch, e.loss, e.wall_ms);
      out << buf;
    }
    out.flush();
  };
}

std::set<std::string> split_metrics(const std::string& list) {
  std::set<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.insert(item);
  return out;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app{"cdpam: contrastive perceptual audio metric"};
  app.require_subcommand(1);

  Common synth_c, pre_c, jnd_c, fine_c, eval_c;
  auto* synth = app.add_subcommand("synth-data", "Write corpus, JND/triplet manifests and eval splits");
  add_common(synth, synth_c, false);
  auto* pre = app.add_subcommand("pretrain", "Contrastive encoder pretraining");
  add_common(pre, pre_c, true);
  auto* jnd = app.add_subcommand("train-jnd", "Train the loss-net on JND pairs");
  add_common(jnd, jnd_c, true);
  auto* fine = app.add_subcommand("finetune", "Fine-tune the loss-net on triplets");
  add_common(fine, fine_c, true);

  auto* dist = app.add_subcommand("distance", "Distance between two WAV files");
  std::string dist_ckpt, wav_a, wav_b;
  bool dist_json = false;
  dist->add_option("--ckpt", dist_ckpt, "Checkpoint")->required();
  dist->add_option("a", wav_a, "Reference WAV")->required();
  dist->add_option("b", wav_b, "Test WAV")->required();
  dist->add_flag("--json", dist_json, "Machine-readable output");

  auto* ev = app.add_subcommand("eval", "Run the evaluation suite");
  add_common(ev, eval_c, false);
  std::string eval_ckpt, eval_dir, metrics, report_dir;
  ev->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
  ev->add_option("--eval-dir", eval_dir, "Eval split directory (default: <out>/eval)");
  ev->add_option("--metrics", metrics, "Comma-separated subset of 2afc,common_area,monotonicity,precision_at_k,mos,robustness");
  ev->add_option("--report-dir", report_dir, "Report directory (default: <out>/reports/<stage>)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    throw InputError(e.what());
  }

  if (*synth) {
    const RunConfig cfg = resolve(synth_c, synth);
    run_synth_data(cfg);
    if (synth_c.json_mode)
      out << json{{"out", cfg.out.string()}}.dump() << '\n';
    else
      out << "wrote " << cfg.out.string() << '\n';
    return 0;
  }
  auto train = [&](Common& c, CLI::App* sub, TrainStage stage) {
    const RunConfig cfg = resolve(c, sub, &stage);
    const auto cb = progress(out, c.json_mode);
    Model m = stage == TrainStage::kPretrain ? run_pretrain(cfg, cb)
              : stage == TrainStage::kJnd    ? run_train_jnd(cfg, cb)
                                             : run_finetune(cfg, cb);
    const auto path = RunLayout{cfg.out}.checkpoint(m.stage());
    if (c.json_mode)
      out << json{{"checkpoint", path.string()}, {"stage", stage_name(m.stage())}}.dump() << '\n';
    else
      out << "saved " << path.string() << '\n';
    return 0;
  };
  if (*pre) return train(pre_c, pre, TrainStage::kPretrain);
  if (*jnd) return train(jnd_c, jnd, TrainStage::kJnd);
  if (*fine) return train(fine_c, fine, TrainStage::kFinetune);

  if (*dist) {
    const Model m = load_checkpoint(dist_ckpt);
    int rate = kCanonicalSampleRate;
    Index samples = kCanonicalClipSamples;
    if (m.metadata().contains("audio")) {
      rate = m.metadata()["audio"].value("sample_rate_hz", rate);
      samples = m.metadata()["audio"].value("clip_samples", samples);
    }
    const Waveform a = to_canonical(read_wav(wav_a), rate, samples);
    const Waveform b = to_canonical(read_wav(wav_b), rate, samples);
    const double d = m.distance(a, b);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", d);
    if (dist_json)
      out << json{{"distance", d}, {"a", wav_a}, {"b", wav_b}, {"stage", stage_name(m.stage())}}.dump() << '\n';
    else
      out << buf << '\n';
    return 0;
  }

  if (*ev) {
    const RunConfig cfg = resolve(eval_c, ev);
    const Model m = load_checkpoint(eval_ckpt);
    const std::filesystem::path dir = eval_dir.empty() ? RunLayout{cfg.out}.eval_dir() : std::filesystem::path(eval_dir);
    const auto reports = run_eval(m, dir, cfg, split_metrics(metrics));
    const std::filesystem::path rdir =
        report_dir.empty() ? RunLayout{cfg.out}.reports(m.stage()) : std::filesystem::path(report_dir);
    write_eval_outputs(reports, rdir);
    write_run_manifest(cfg, "eval-" + stage_name(m.stage()));
    if (eval_c.json_mode) {
      out << json(reports).dump() << '\n';
    } else {
      char buf[160];
      for (const auto& r : reports) {
        std::snprintf(buf, sizeof(buf), "%-16s %.6f (n=%zu)\n", r.metric.c_str(), r.value, r.n);
        out << buf;
      }
    }
    return 0;
  }
  return 2;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  tune_allocator();
  try {
    return dispatch(args, out);
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 1;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace cdpam
