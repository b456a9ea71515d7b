#pragma once

#include <vector>

#include "lithomt/detection.hpp"
#include "lithomt/raster.hpp"

namespace lmt {

// Per-example scores; the list versions average them.
double pixel_accuracy(const BinaryRaster& pred, const BinaryRaster& gt);
double raster_iou(const BinaryRaster& pred, const BinaryRaster& gt);
double edge_f1_score(const BinaryRaster& pred, const BinaryRaster& gt, int dilation_radius = 1);

double mean_pixel_accuracy(const std::vector<BinaryRaster>& preds, const std::vector<BinaryRaster>& gts);
double mean_iou(const std::vector<BinaryRaster>& preds, const std::vector<BinaryRaster>& gts);
double edge_f1(const std::vector<BinaryRaster>& preds, const std::vector<BinaryRaster>& gts, int dilation_radius = 1);

struct MatchOptions {
  double iou_thr = 0.5;
  double conf_thr = 0.6;
  bool class_agnostic = false;
};

// Detections and ground truth of one raster; detection boxes are normalized
// against width x height, ground-truth boxes are in pixels.
struct ImageDetections {
  std::vector<Detection> dets;
  std::vector<HotspotAnnotation> gts;
  int width = 1, height = 1;
};

struct MatchResult {
  int tp = 0, fp = 0;
  std::vector<int> det_status;  // 1 TP, 0 FP, -1 below the confidence floor
  std::vector<int> matched_gt;  // per gt: matching detection index or -1
};

MatchResult match_detections(const ImageDetections& img, const MatchOptions& opt = {});

struct DetectionSummary {
  long tp = 0, fp = 0, fa = 0, n_gt = 0;
  double recall = 0, precision = 0, f1 = 0, ap50 = 0;
};

// Full confidence sweep (conf_thr ignored), all-point interpolation, averaged
// over classes that have ground truth. No ground truth at all gives 0.
double average_precision(const std::vector<ImageDetections>& images, const MatchOptions& opt = {});

DetectionSummary detection_summary(const std::vector<ImageDetections>& images, const MatchOptions& opt = {});

}  // namespace lmt
