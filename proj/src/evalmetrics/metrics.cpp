#include "lithomt/evalmetrics/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "lithomt/error.hpp"
#include "lithomt/morphology.hpp"

namespace lmt {

namespace {

void require_same(const BinaryRaster& a, const BinaryRaster& b) {
  if (!a.same_shape(b)) throw InputError("metric rasters differ in shape");
}

template <typename F>
double mean_over(const std::vector<BinaryRaster>& preds, const std::vector<BinaryRaster>& gts, F&& f) {
  if (preds.size() != gts.size()) throw InputError("metric lists differ in length");
  if (preds.empty()) return 0.0;
  double s = 0;
  for (size_t i = 0; i < preds.size(); ++i) s += f(preds[i], gts[i]);
  return s / preds.size();
}

BoxCorners det_box(const Detection& d, const ImageDetections& img) { return to_corners(d.box, img.width, img.height); }

bool same_class(const Detection& d, const HotspotAnnotation& g, const MatchOptions& opt) {
  return opt.class_agnostic || d.klass == g.klass;
}

// Greedy one-to-one assignment of the given detections in order.
std::vector<int> greedy(const ImageDetections& img, const std::vector<int>& order, const MatchOptions& opt,
                        std::vector<int>& matched_gt) {
  std::vector<int> status(order.size(), 0);
  for (size_t n = 0; n < order.size(); ++n) {
    const Detection& d = img.dets[order[n]];
    const BoxCorners b = det_box(d, img);
    int best = -1;
    double best_iou = opt.iou_thr;
    for (size_t g = 0; g < img.gts.size(); ++g) {
      if (matched_gt[g] >= 0 || !same_class(d, img.gts[g], opt)) continue;
      const double v = iou(b, to_corners(img.gts[g].bbox));
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      matched_gt[best] = order[n];
      status[n] = 1;
    }
  }
  return status;
}

std::vector<int> by_confidence(const std::vector<Detection>& dets, std::vector<int> idx) {
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return dets[a].confidence > dets[b].confidence; });
  return idx;
}

}  // namespace

double pixel_accuracy(const BinaryRaster& pred, const BinaryRaster& gt) {
  require_same(pred, gt);
  if (pred.pixels.size() == 0) return 1.0;
  return static_cast<double>((pred.pixels == gt.pixels).count()) / pred.pixels.size();
}

double raster_iou(const BinaryRaster& pred, const BinaryRaster& gt) {
  require_same(pred, gt);
  const auto p = pred.pixels != 0, g = gt.pixels != 0;
  const long uni = (p || g).count();
  if (uni == 0) return 1.0;
  return static_cast<double>((p && g).count()) / uni;
}

double edge_f1_score(const BinaryRaster& pred, const BinaryRaster& gt, int dilation_radius) {
  require_same(pred, gt);
  if (dilation_radius < 0) throw ConfigError("edge_f1: dilation radius must be non-negative");
  const Bits ep = morph::edge_regions(pred.pixels), eg = morph::edge_regions(gt.pixels);
  const long np = (ep != 0).count(), ng = (eg != 0).count();
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const int k = 2 * dilation_radius + 1;
  const Bits dp = morph::dilate(ep, k), dg = morph::dilate(eg, k);
  const double precision = static_cast<double>(((ep != 0) && (dg != 0)).count()) / np;
  const double recall = static_cast<double>(((eg != 0) && (dp != 0)).count()) / ng;
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

double mean_pixel_accuracy(const std::vector<BinaryRaster>& preds, const std::vector<BinaryRaster>& gts) {
  return mean_over(preds, gts, [](const auto& p, const auto& g) { return pixel_accuracy(p, g); });
}

double mean_iou(const std::vector<BinaryRaster>& preds, const std::vector<BinaryRaster>& gts) {
  return mean_over(preds, gts, [](const auto& p, const auto& g) { return raster_iou(p, g); });
}

double edge_f1(const std::vector<BinaryRaster>& preds, const std::vector<BinaryRaster>& gts, int dilation_radius) {
  return mean_over(preds, gts, [&](const auto& p, const auto& g) { return edge_f1_score(p, g, dilation_radius); });
}

MatchResult match_detections(const ImageDetections& img, const MatchOptions& opt) {
  MatchResult r;
  r.det_status.assign(img.dets.size(), -1);
  r.matched_gt.assign(img.gts.size(), -1);
  std::vector<int> kept;
  for (size_t i = 0; i < img.dets.size(); ++i)
    if (img.dets[i].confidence > opt.conf_thr) kept.push_back(static_cast<int>(i));
  const auto order = by_confidence(img.dets, kept);
  const auto status = greedy(img, order, opt, r.matched_gt);
  for (size_t n = 0; n < order.size(); ++n) {
    r.det_status[order[n]] = status[n];
    (status[n] ? r.tp : r.fp)++;
  }
  return r;
}

double average_precision(const std::vector<ImageDetections>& images, const MatchOptions& opt) {
  // Class key -> (confidence, is_tp) over all images, plus gt count.
  struct Entry {
    double conf;
    long image, index;
    bool tp;
  };
  std::map<int, std::vector<Entry>> ranked;
  std::map<int, long> gt_count;
  const auto key = [&](HotspotClass k) { return opt.class_agnostic ? 0 : static_cast<int>(k); };
  for (long i = 0; i < static_cast<long>(images.size()); ++i) {
    const auto& img = images[i];
    for (const auto& g : img.gts) ++gt_count[key(g.klass)];
    std::vector<int> all(img.dets.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<int> matched(img.gts.size(), -1);
    const auto order = by_confidence(img.dets, all);
    const auto status = greedy(img, order, opt, matched);
    for (size_t n = 0; n < order.size(); ++n)
      ranked[key(img.dets[order[n]].klass)].push_back({img.dets[order[n]].confidence, i, order[n], status[n] == 1});
  }
  if (gt_count.empty()) return 0.0;
  double total = 0;
  for (const auto& [k, n_gt] : gt_count) {
    auto entries = ranked[k];
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.conf != b.conf) return a.conf > b.conf;
      if (a.image != b.image) return a.image < b.image;
      return a.index < b.index;
    });
    std::vector<double> prec, rec;
    long tp = 0;
    for (size_t n = 0; n < entries.size(); ++n) {
      tp += entries[n].tp;
      // tied confidences enter together
      if (n + 1 < entries.size() && entries[n + 1].conf == entries[n].conf) continue;
      prec.push_back(static_cast<double>(tp) / (n + 1));
      rec.push_back(static_cast<double>(tp) / n_gt);
    }
    for (size_t n = prec.size(); n-- > 1;) prec[n - 1] = std::max(prec[n - 1], prec[n]);
    double ap = 0, last_recall = 0;
    for (size_t n = 0; n < prec.size(); ++n) {
      ap += (rec[n] - last_recall) * prec[n];
      last_recall = rec[n];
    }
    total += ap;
  }
  return total / gt_count.size();
}

DetectionSummary detection_summary(const std::vector<ImageDetections>& images, const MatchOptions& opt) {
  DetectionSummary s;
  for (const auto& img : images) {
    const auto m = match_detections(img, opt);
    s.tp += m.tp;
    s.fp += m.fp;
    s.n_gt += static_cast<long>(img.gts.size());
  }
  s.fa = s.fp;
  s.recall = s.n_gt > 0 ? static_cast<double>(s.tp) / s.n_gt : 0.0;
  s.precision = s.tp + s.fp > 0 ? static_cast<double>(s.tp) / (s.tp + s.fp) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  s.ap50 = average_precision(images, opt);
  return s;
}

}  // namespace lmt
