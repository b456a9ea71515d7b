#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

#include "lithomt/corpus/corpus.hpp"
#include "lithomt/error.hpp"
#include "lithomt/pipeline/evaluation.hpp"
#include "lithomt/pipeline/training.hpp"

using namespace lmt;
namespace fs = std::filesystem;

namespace {

KeyValueConfig load_or_empty(const std::string& path) {
  return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

int gen_data(const std::string& config, const std::string& out, int workers) {
  CorpusConfig c = CorpusConfig::from_config(load_or_empty(config));
  if (workers > 0) c.workers = workers;
  if (deterministic_mode()) c.workers = 1;
  const CorpusManifest m = build_corpus(c, out);
  spdlog::info("corpus: {} samples ({} train / {} test), hash {}", m.records.size(), m.count(Split::train),
               m.count(Split::test), m.content_hash);
  return 0;
}

struct TrainArgs {
  std::string config, corpus, out, task, gen_ckpt, det_ckpt;
  long steps = -1;
  bool resume = false;
};

int train(Phase phase, const TrainArgs& a) {
  KeyValueConfig kv = load_or_empty(a.config);
  kv.set("run.phase", to_string(phase));
  kv.set("run.corpus", a.corpus);
  if (!a.task.empty()) kv.set("run.task", a.task);
  if (!a.gen_ckpt.empty()) kv.set("run.gen_checkpoint", a.gen_ckpt);
  if (!a.det_ckpt.empty()) kv.set("run.det_checkpoint", a.det_ckpt);
  if (a.steps >= 0) kv.set("run.steps", std::to_string(a.steps));
  const RunConfig cfg = RunConfig::from_config(kv);
  TrainOptions opt;
  opt.out_dir = a.out;
  opt.resume = a.resume;
  const TrainResult r = run_training(cfg, opt);
  spdlog::info("wrote {}", r.final_path.string());
  if (!r.generator_hash_before.empty())
    spdlog::info("generator hash {} -> {}", r.generator_hash_before, r.generator_hash_after);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lithomt: lithography simulation and hotspot detection"};
  app.require_subcommand(1);
  if (deterministic_mode()) spdlog::info("deterministic mode");

  std::string config, out;
  int workers = 0;
  auto* gd = app.add_subcommand("gen-data", "Build a synthetic corpus");
  gd->add_option("--config", config, "corpus config file");
  gd->add_option("--out", out, "output directory")->required();
  gd->add_option("--workers", workers, "worker threads (0 = all cores)");

  TrainArgs ta;
  std::vector<std::pair<CLI::App*, Phase>> trainers;
  for (auto [name, phase, help] : {std::tuple{"train-gen", Phase::gen_pretrain, "Pre-train the generator"},
                                   std::tuple{"train-det", Phase::det_pretrain, "Pre-train a detector"},
                                   std::tuple{"finetune-joint", Phase::joint_finetune, "Joint fine-tuning"}}) {
    auto* s = app.add_subcommand(name, help);
    s->add_option("--config", ta.config, "run config file");
    s->add_option("--corpus", ta.corpus, "corpus directory")->required();
    s->add_option("--out", ta.out, "output directory")->required();
    s->add_option("--steps", ta.steps, "override run.steps");
    s->add_flag("--resume", ta.resume, "continue from OUT/last.ckpt");
    if (phase == Phase::det_pretrain) s->add_option("--task", ta.task, "drc | mrc | lrc");
    if (phase == Phase::joint_finetune) {
      s->add_option("--gen-ckpt", ta.gen_ckpt, "generator checkpoint");
      s->add_option("--det-ckpt", ta.det_ckpt, "LRC detector checkpoint");
    }
    trainers.emplace_back(s, phase);
  }

  std::string ckpt, corpus, report, csv, overlays, task = "drc", split = "test";
  bool agnostic = false;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus split");
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--corpus", corpus, "corpus directory")->required();
  ev->add_option("--task", task, "drc | mrc | lrc | unified | gen")
      ->check(CLI::IsMember({"drc", "mrc", "lrc", "unified", "gen"}));
  ev->add_option("--report", report, "JSON report path")->required();
  ev->add_option("--csv", csv, "per-image CSV path");
  ev->add_option("--overlays", overlays, "overlay directory");
  ev->add_option("--split", split, "train | test")->check(CLI::IsMember({"train", "test"}));
  ev->add_flag("--class-agnostic", agnostic, "match boxes regardless of class");

  std::string layout, condition;
  PredictOptions popt;
  auto* pr = app.add_subcommand("predict", "Run a checkpoint on one layout");
  pr->add_option("--ckpt", ckpt, "checkpoint")->required();
  pr->add_option("--layout", layout, "layout PNG")->required();
  pr->add_option("--condition", condition, "process condition JSON");
  pr->add_option("--out", out, "output directory")->required();
  pr->add_flag("--probs", popt.probabilities, "also write probability rasters");
  pr->add_option("--min-confidence", popt.min_confidence, "confidence floor for written detections");

  auto* rd = app.add_subcommand("render", "Draw overlays from an evaluation report");
  rd->add_option("--report", report, "JSON report")->required();
  rd->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
  }

  try {
    if (*gd) return gen_data(config, out, workers);
    for (auto [s, phase] : trainers)
      if (*s) return train(phase, ta);
    if (*ev) {
      EvalOptions o;
      o.task = task;
      o.split = parse_split(split);
      o.match.class_agnostic = agnostic;
      o.overlay_dir = overlays;
      const EvalReport r = evaluate_run(fs::path(ckpt), corpus, o);
      write_report(r, report, csv);
      if (r.generation) spdlog::info("mPA {:.4f} mIoU {:.4f} edge F1 {:.4f}", r.mpa, r.miou, r.edge_f1);
      if (r.detection)
        spdlog::info("recall {:.4f} precision {:.4f} F1 {:.4f} FA {} AP50 {:.4f}", r.summary.recall,
                     r.summary.precision, r.summary.f1, r.summary.fa, r.summary.ap50);
      return 0;
    }
    if (*pr) {
      predict(ckpt, layout, condition, out, popt);
      return 0;
    }
    if (*rd) {
      render_report(report, out);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::io);
  }
  return 0;
}
