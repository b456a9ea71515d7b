#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lithomt/corpus/corpus.hpp"
#include "lithomt/evalmetrics/metrics.hpp"
#include "lithomt/pipeline/checkpoint.hpp"

namespace lmt {

struct EvalOptions {
  std::string task = "drc";  // drc | mrc | lrc | unified | gen
  Split split = Split::test;
  MatchOptions match;
  int batch = 8;
  int edge_radius = 1;
  std::filesystem::path overlay_dir;  // empty: no overlays
};

struct ImageReport {
  std::string id, condition;
  double pa = 0, iou = 0, edge_f1 = 0, mask_iou = 0;  // generation tasks
  ImageDetections detections;                         // detection tasks
  MatchResult match;
};

struct EvalReport {
  std::string task, split, checkpoint_kind;
  bool generation = false, detection = false;
  double mpa = 0, miou = 0, edge_f1 = 0;                 // contour
  double mask_mpa = 0, mask_miou = 0, mask_edge_f1 = 0;  // mask
  DetectionSummary summary;
  int n_images = 0;
  std::uint64_t oracle_calls = 0;  // simulations run while evaluating
  std::filesystem::path corpus;
  std::string corpus_hash;
  KeyValueConfig config;
  std::vector<ImageReport> images;
};

EvalReport evaluate_run(const Checkpoint& ckpt, const std::filesystem::path& corpus, const EvalOptions& opt);
EvalReport evaluate_run(const std::filesystem::path& ckpt, const std::filesystem::path& corpus, const EvalOptions& opt);

std::string report_json(const EvalReport& r);
void write_report(const EvalReport& r, const std::filesystem::path& json_path, const std::filesystem::path& csv_path = {});

// Layout in gray with predicted boxes red, missed ground truth blue and
// false detections purple, one PNG per image of the report.
void render_report(const std::filesystem::path& report_path, const std::filesystem::path& out_dir);

// {"source": ..., "threshold": ..., "focus": ..., "dose": ...}
ProcessCondition parse_condition_json(const std::string& text, int source_size = 32);

struct PredictOptions {
  bool probabilities = false;
  double min_confidence = 0.0;  // detections written to the JSON lines
  double overlay_confidence = 0.6;
};
// Generator checkpoints write {id}_maskpred.png and {id}_contourpred.png;
// unified and DRC checkpoints also append detections to detections.jsonl.
void predict(const std::filesystem::path& ckpt, const std::filesystem::path& layout_png,
             const std::filesystem::path& condition_json, const std::filesystem::path& out_dir,
             const PredictOptions& opt = {});

}  // namespace lmt
