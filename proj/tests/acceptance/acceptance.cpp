// Acceptance checks: one PASS/FAIL line per criterion.
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lithomt/corpus/corpus.hpp"
#include "lithomt/corpus/litho.hpp"
#include "lithomt/detmodel/detector.hpp"
#include "lithomt/error.hpp"
#include "lithomt/evalmetrics/metrics.hpp"
#include "lithomt/genmodel/generator.hpp"
#include "lithomt/objectives/detection.hpp"
#include "lithomt/objectives/generation.hpp"
#include "lithomt/pipeline/checkpoint.hpp"
#include "lithomt/pipeline/evaluation.hpp"
#include "lithomt/pipeline/training.hpp"
#include "lithomt/tensor/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace lmt;

namespace {

using G = Grid<double>;
using Clock = std::chrono::steady_clock;

struct Context {
  fs::path work, configs;
};

// Named sub-checks of one criterion.
class Tally {
 public:
  void truth(const std::string& name, bool ok, const std::string& info = {}) {
    ++n_;
    if (ok && record_) notes_.push_back(info.empty() ? name : name + ": " + info);
    if (!ok) failures_.push_back(info.empty() ? name : name + " (" + info + ")");
  }
  void near(const std::string& name, double got, double want, double tol) {
    std::ostringstream s;
    s.precision(10);
    s << "got " << got << ", want " << want << " +- " << tol;
    truth(name, std::isfinite(got) && std::abs(got - want) <= tol, s.str());
  }
  void note(const std::string& s) { notes_.push_back(s); }
  void record_passes() { record_ = true; }
  bool ok() const { return failures_.empty(); }
  std::string summary() const {
    std::string out = std::to_string(n_ - failures_.size()) + "/" + std::to_string(n_) + " checks";
    for (const auto& n : notes_) out += "; " + n;
    for (const auto& f : failures_) out += "; FAILED " + f;
    return out;
  }

 private:
  long n_ = 0;
  bool record_ = false;
  std::vector<std::string> failures_, notes_;
};

std::string fmt_double(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void time_limit(Tally& t, Clock::time_point t0, double limit) {
  const double s = seconds_since(t0);
  t.truth("runtime under " + fmt_double(limit, 0) + " s", s < limit, fmt_double(s, 1) + " s");
}

// ---------------------------------------------------------------- helpers

G random_prob(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  G g(n, n);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    double v = u(rng);
    while (std::abs(v - 0.5) < 0.02) v = u(rng);
    g.data()[i] = v;
  }
  return g;
}

Bits random_bits(int n, std::mt19937_64& rng, double p = 0.4) {
  std::bernoulli_distribution b(p);
  Bits x(n, n);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = b(rng);
  return x;
}

Bits blob_bits(int n, std::mt19937_64& rng) {
  Bits x = Bits::Zero(n, n);
  for (int r = 0; r < 5; ++r) {
    const int x0 = int(rng() % (n - 10)), y0 = int(rng() % (n - 10));
    x.block(y0, x0, 3 + int(rng() % 7), 3 + int(rng() % 7)).setOnes();
  }
  return x;
}

double rel_err(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Coordinates checked against central differences.
struct FdCount {
  long checked = 0, passed = 0;
  double worst = 0;
  void add(double analytic, double numeric) {
    const double r = rel_err(analytic, numeric);
    ++checked;
    passed += r < 1e-3;
    worst = std::max(worst, r);
  }
  void add(const GradCheckReport& r) {
    checked += r.checked;
    passed += r.passed;
    worst = std::max(worst, r.worst);
  }
  double fraction() const { return checked ? double(passed) / checked : 0.0; }
};

template <typename F>
void raster_fd(FdCount& c, G g, const G& analytic, F&& f, double h = 1e-5) {
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double keep = g.data()[i];
    g.data()[i] = keep + h;
    const double up = f(g);
    g.data()[i] = keep - h;
    const double dn = f(g);
    g.data()[i] = keep;
    c.add(analytic.data()[i], (up - dn) / (2 * h));
  }
}

template <typename F>
void scalar_fd(FdCount& c, double x, double analytic, F&& f, double h = 1e-6) {
  c.add(analytic, (f(x + h) - f(x - h)) / (2 * h));
}

void fd_verdict(Tally& t, const std::string& name, const FdCount& c) {
  t.truth(name, c.checked > 0 && c.fraction() >= 0.99,
          std::to_string(c.passed) + "/" + std::to_string(c.checked) + " worst " + fmt_double(c.worst, 6));
}

DetectorOutput<double> random_output(int q, int k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  DetectorOutput<double> o;
  o.probs = Tensor<double>::zeros({q, k});
  o.boxes = Tensor<double>::zeros({q, 4});
  for (int i = 0; i < q * k; ++i) o.probs.data(i) = u(rng);
  for (int i = 0; i < q; ++i) {
    o.boxes.data(i * 4 + 0) = u(rng);
    o.boxes.data(i * 4 + 1) = u(rng);
    o.boxes.data(i * 4 + 2) = 0.05 + 0.3 * u(rng);
    o.boxes.data(i * 4 + 3) = 0.05 + 0.3 * u(rng);
  }
  return o;
}

std::array<double, 4> corners(const double* b) {
  return {b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2};
}

std::vector<GtBox> random_gts(int n, int k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 0.8), s(0.05, 0.3);
  std::vector<GtBox> g;
  for (int i = 0; i < n; ++i) g.push_back({int(rng() % k), {u(rng), u(rng), s(rng), s(rng)}});
  return g;
}

G image_of(const Tensor<double>& t, int b) {
  const int h = t.dim(1), w = t.dim(2);
  return Eigen::Map<const G>(t.ptr() + long(b) * h * w, h, w);
}

Tensor<double> stack_images(const std::vector<G>& gs) {
  const int h = int(gs[0].rows()), w = int(gs[0].cols());
  Tensor<double> t(Shape{int(gs.size()), h, w, 1});
  for (size_t b = 0; b < gs.size(); ++b)
    Eigen::Map<G>(t.ptr() + long(b) * h * w, h, w) = gs[b];
  return t;
}

GenConfig tiny_generator() {
  GenConfig c;
  c.image = 64;
  c.widths = {16, 32, 32};
  c.depths = {2, 1, 1};
  c.heads = 2;
  c.proc_size = 16;
  c.proc_channels = {8, 16};
  c.dec_widths = {16, 8, 8, 8};
  c.scalar_hidden = 4;
  c.attn_grid = 8;
  return c;
}

DetConfig tiny_detector(Task task) {
  DetConfig c;
  c.task = task;
  c.image = 64;
  c.stem = {8, 16};
  c.channels = {16, 24, 32};
  c.width = 32;
  c.heads = 2;
  c.ffn = 64;
  c.queries = 10;
  c.decoder_layers = 1;
  return c;
}

Tensor<double> blob_batch(int b, int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<G> gs;
  for (int i = 0; i < b; ++i) gs.push_back(blob_bits(side, rng).cast<double>());
  return stack_images(gs);
}

ProcessCondition random_condition(std::mt19937_64& rng) {
  static const SourceType sources[] = {SourceType::annular, SourceType::circular, SourceType::bullseye};
  static const double thresholds[] = {0.0923125, 0.1436665};
  std::uniform_real_distribution<double> focus(0, 60), dose(0.9, 1.3);
  return make_condition(sources[rng() % 3], thresholds[rng() % 2], focus(rng), dose(rng));
}

// ------------------------------------------------------------- criterion 1

bool run_1(const Context&, Tally& t) {
  const auto t0 = Clock::now();
  // bce
  {
    Bits tg(2, 2);
    tg << 1, 0, 0, 1;
    const G perfect = tg.cast<double>();
    t.truth("bce perfect <= 1.2e-7", bce_loss<double>(perfect, tg).value <= 1.2e-7);
    t.near("bce 0.5 = ln 2", bce_loss<double>(G::Constant(2, 2, 0.5), tg).value, std::log(2.0), 1e-6);
    t.near("bce inverted = -ln eps", bce_loss<double>(1.0 - perfect, tg).value, -std::log(kBceEps), 1e-4);
    t.near("bce inverted ~ 16.12", bce_loss<double>(1.0 - perfect, tg).value, 16.118, 1e-3);
  }
  // dice
  {
    Bits tg(2, 2);
    tg << 1, 1, 0, 0;
    t.near("dice identical", dice_loss<double>(tg.cast<double>(), tg).value, 0.0, 1e-6);
    t.truth("dice both empty = 0", dice_loss<double>(G::Zero(4, 4), Bits::Zero(4, 4)).value == 0.0);
    t.near("dice 2x2 ones vs first row", dice_loss<double>(G::Ones(2, 2), tg).value, 2.0 / 7.0, 1e-6);
  }
  // edge regions
  {
    BinaryRaster sq(Bits::Zero(9, 9));
    sq.pixels.block(2, 2, 5, 5).setOnes();
    Bits ring = Bits::Zero(9, 9);
    ring.block(2, 2, 5, 5).setOnes();
    ring.block(3, 3, 3, 3).setZero();
    t.truth("edge regions 5x5 square is the 16-pixel ring", (edge_regions(sq).pixels == ring).all());
    t.truth("edge regions of zeros", edge_regions(BinaryRaster(Bits::Zero(6, 6))).empty());
    BinaryRaster line(Bits::Zero(6, 6));
    line.pixels.row(3).setOnes();
    t.truth("edge regions of a thin line", edge_regions(line) == line);
  }
  // edge dice
  {
    Bits tg = Bits::Zero(16, 16);
    tg.block(4, 2, 6, 6).setOnes();
    Bits shifted = Bits::Zero(16, 16);
    shifted.block(4, 8, 6, 6).setOnes();  // translated by the width: disjoint edges
    const double e1 = double(edge_regions(BinaryRaster(tg)).count());
    const double e2 = double(edge_regions(BinaryRaster(shifted)).count());
    t.near("edge dice identical", edge_dice_loss<double>(tg.cast<double>(), tg).value, 0.0, 1e-6);
    t.near("edge dice disjoint", edge_dice_loss<double>(shifted.cast<double>(), tg).value,
           1.0 - kDiceSmooth / (e1 + e2 + kDiceSmooth), 1e-6);
    t.truth("edge dice both empty = 0", edge_dice_loss<double>(G::Zero(8, 8), Bits::Zero(8, 8)).value == 0.0);
  }
  // reconstruction
  {
    std::mt19937_64 rng(3);
    const Bits gm = blob_bits(32, rng), gc = blob_bits(32, rng);
    GenLossWeights w;
    const auto perfect = reconstruction_loss<double>(gm.cast<double>(), gc.cast<double>(), gm, gc, w);
    t.near("reconstruction perfect", perfect.total, 0.0, 1e-4);
    const G p = random_prob(32, rng);
    const auto same = reconstruction_loss<double>(p, p, gm, gm, w);
    t.near("reconstruction equal terms give 3t", same.total, 3.0 * same.mask, 1e-6);
  }
  // sac
  {
    t.near("sac (0.9, 0.2, 0.07)", sac_from_similarity(0.9, {0.2}, 0.07).value, std::log1p(std::exp(-10.0)), 1e-6);
    t.near("sac ~ 4.54e-5", sac_from_similarity(0.9, {0.2}, 0.07).value, 4.54e-5, 1e-7);
    t.near("sac symmetric = ln 2", sac_from_similarity(0.4, {0.4}, 0.07).value, std::log(2.0), 1e-6);
    t.truth("sac grows with a negative's similarity",
            sac_from_similarity(0.4, {0.5}, 0.07).value > sac_from_similarity(0.4, {0.45}, 0.07).value);
    bool threw = false;
    try {
      sac_loss<double>({G::Zero(4, 4), G::Zero(4, 4)}, {{0, 1, {}}}, 0.07);
    } catch (const InputError&) {
      threw = true;
    }
    t.truth("sac empty negatives raise", threw);
  }
  // pac
  {
    std::mt19937_64 rng(8);
    const Bits tg = blob_bits(32, rng);
    const G p = random_prob(32, rng);
    const double e = edge_dice_loss<double>(p, tg).value;
    t.near("pac edge loss 0.3, margin 0.5", pac_loss<double>({p}, {&tg}, e + 0.2).value, 0.2, 1e-6);
    t.truth("pac margin satisfied", pac_loss<double>({p}, {&tg}, e - 0.4).value == 0.0);
    t.near("pac identical = margin", pac_loss<double>({tg.cast<double>()}, {&tg}, 0.5).value, 0.5, 1e-6);
    t.truth("pac empty = 0", pac_loss<double>({}, {}, 0.5).value == 0.0);
  }
  // total generation
  {
    std::mt19937_64 rng(12);
    std::vector<Bits> gts;
    for (int i = 0; i < 4; ++i) gts.push_back(blob_bits(24, rng));
    GenBatch<double> b;
    for (int i = 0; i < 4; ++i) b.mask_pred.push_back(random_prob(24, rng)), b.contour_pred.push_back(random_prob(24, rng));
    b.gt_mask = {&gts[0], &gts[1], nullptr, nullptr};
    b.gt_contour = {&gts[2], &gts[3], nullptr, nullptr};
    b.sac = {{0, 2, {1, 3}}};
    b.pac = {{2, 0}};
    GenLossWeights w;
    w.w_con = 0;
    double rec = 0;
    for (int i = 0; i < 2; ++i)
      rec += reconstruction_loss<double>(b.mask_pred[i], b.contour_pred[i], *b.gt_mask[i], *b.gt_contour[i], w).total / 2;
    t.truth("w_con = 0 is reconstruction exactly", total_generation_loss(b, w).total == rec);
    GenBatch<double> perfect;
    for (int i = 0; i < 2; ++i) {
      perfect.mask_pred.push_back(gts[i].cast<double>());
      perfect.contour_pred.push_back(gts[i + 2].cast<double>());
    }
    perfect.gt_mask = {&gts[0], &gts[1]};
    perfect.gt_contour = {&gts[2], &gts[3]};
    t.near("generation loss perfect", total_generation_loss(perfect, w).total, 0.0, 1e-4);
  }
  // varifocal
  {
    DetLossWeights w;
    const double wt = 0.75 * std::sqrt(0.9) * 0.2 + 0.8;
    t.near("vfl weight", wt, 0.9423, 5e-5);
    t.near("vfl p=0.9 t=0.8", varifocal_term(0.9, 0.8, w).value, -wt * (0.8 * std::log(0.9) + 0.2 * std::log(0.1)), 1e-6);
    t.near("vfl ~ 0.5134", varifocal_term(0.9, 0.8, w).value, 0.5134, 5e-5);
    t.near("vfl p=0.25 t=0", varifocal_term(0.25, 0.0, w).value, -0.375 * std::log(0.75), 1e-6);
    t.near("vfl perfect positive", varifocal_term(1.0 - 1e-9, 1.0, w).value, 0.0, 1e-4);
  }
  // fppl
  {
    DetLossWeights w;
    t.near("fppl p=0.5", fppl_term(0.5, w).value, 0.25 * 0.25 * std::log(2.0), 1e-6);
    t.near("fppl p=0.9", fppl_term(0.9, w).value, 0.25 * 0.81 * std::log(10.0), 1e-6);
    t.truth("fppl monotone in p", fppl_term(0.9, w).value > fppl_term(0.5, w).value);
    t.near("fppl p -> 0", fppl_term(1e-9, w).value, 0.0, 1e-6);
  }
  // box losses
  {
    t.near("bbox identical", bbox_l1_loss<double>({{0.1, 0.2, 0.3, 0.4}}, {{0.1, 0.2, 0.3, 0.4}}).value, 0.0, 1e-6);
    t.near("bbox example", bbox_l1_loss<double>({{0.1, 0.2, 0.3, 0.4}}, {{0.2, 0.2, 0.3, 0.5}}).value, 0.2, 1e-6);
    t.near("giou identical", giou_loss<double>({1, 1, 3, 4}, {1, 1, 3, 4}).value, 0.0, 1e-6);
    t.near("giou disjoint", giou_loss<double>({0, 0, 2, 2}, {4, 4, 6, 6}).value, 1.0 + 28.0 / 36.0, 1e-6);
    bool threw = false;
    try {
      giou_loss<double>({0, 0, 0, 2}, {0, 0, 1, 1});
    } catch (const InputError&) {
      threw = true;
    }
    t.truth("giou degenerate box raises", threw);
  }
  // matching
  {
    std::mt19937_64 rng(2);
    DetLossWeights w;
    const auto out = random_output(4, 3, rng);
    t.truth("hungarian with no gts is empty", hungarian_match(out, {}, w).gt_to_query.empty());
    bool threw = false;
    try {
      hungarian_match(out, random_gts(5, 3, rng), w);
    } catch (const InputError&) {
      threw = true;
    }
    t.truth("more gts than queries raises", threw);
  }
  // total detection
  {
    DetLossWeights w;
    DetectorOutput<double> p;
    p.probs = Tensor<double>::zeros({4, 3});
    p.boxes = Tensor<double>::zeros({4, 4});
    const std::vector<GtBox> gts{{1, {0.3, 0.3, 0.2, 0.2}}, {2, {0.7, 0.6, 0.1, 0.3}}};
    for (int j = 0; j < 4; ++j)
      for (int d = 0; d < 4; ++d) p.boxes.data(j * 4 + d) = d < 2 ? 0.5 : 0.1;
    const int qs[2] = {1, 3};
    for (int i = 0; i < 2; ++i) {
      p.probs.data(qs[i] * 3 + gts[i].klass) = 1.0;
      const auto& b = gts[i].box;
      const double v[4] = {b.cx, b.cy, b.w, b.h};
      for (int d = 0; d < 4; ++d) p.boxes.data(qs[i] * 4 + d) = v[d];
    }
    t.near("detection loss perfect", total_detection_loss(p, gts, w).total, 0.0, 1e-4);
  }
  time_limit(t, t0, 10);
  return t.ok();
}

// ------------------------------------------------------------- criterion 2

// Detection loss recomposed from the public term functions with the
// assignment and IoU targets of `ref` held fixed.
double detection_loss_fixed(const DetectorOutput<double>& o, const std::vector<GtBox>& gts, const DetLossWeights& w,
                            const Assignment& a, const std::vector<double>& targets) {
  const int q = o.queries(), k = o.classes();
  std::vector<int> owner(q, -1);
  for (size_t i = 0; i < a.gt_to_query.size(); ++i) owner[a.gt_to_query[i]] = int(i);
  double vfl = 0;
  std::vector<double> neg;
  for (int j = 0; j < q; ++j)
    for (int c = 0; c < k; ++c) {
      const double p = o.probs.data(j * k + c);
      vfl += varifocal_term(p, targets[j * k + c], w).value / q;
      if (owner[j] < 0) neg.push_back(p);
    }
  std::vector<std::array<double, 4>> pb, gb;
  double gi = 0;
  for (size_t i = 0; i < gts.size(); ++i) {
    const double* b = o.boxes.ptr() + a.gt_to_query[i] * 4;
    const auto& g = gts[i].box;
    const double gv[4] = {g.cx, g.cy, g.w, g.h};
    pb.push_back({b[0], b[1], b[2], b[3]});
    gb.push_back({gv[0], gv[1], gv[2], gv[3]});
    gi += giou_loss(corners(b), corners(gv)).value / gts.size();
  }
  const double fp = neg.empty() ? 0.0 : fppl_loss<double>(neg, w).value;
  const double l1 = gts.empty() ? 0.0 : bbox_l1_loss<double>(pb, gb).value;
  return w.w_vfl * vfl + w.w_fppl * fp + w.w_bbox * l1 + w.w_giou * gi;
}

std::vector<double> iou_targets(const DetectorOutput<double>& o, const std::vector<GtBox>& gts, const Assignment& a) {
  std::vector<double> t(o.probs.numel(), 0.0);
  for (size_t i = 0; i < gts.size(); ++i) {
    const int j = a.gt_to_query[i];
    const auto& g = gts[i].box;
    const double gv[4] = {g.cx, g.cy, g.w, g.h};
    t[j * o.classes() + gts[i].klass] = 1.0 - iou_loss(corners(o.boxes.ptr() + j * 4), corners(gv)).value;
  }
  return t;
}

// Generation loss recomposed from the public term functions with every
// prediction's edge set held at `edges`.
struct EdgeSets {
  std::vector<G> mask, contour;
};

EdgeSets edge_sets(const GenBatch<double>& b) {
  EdgeSets e;
  for (size_t i = 0; i < b.mask_pred.size(); ++i) {
    e.mask.push_back(edge_regions(threshold(b.mask_pred[i], 0.5)).pixels.cast<double>());
    e.contour.push_back(edge_regions(threshold(b.contour_pred[i], 0.5)).pixels.cast<double>());
  }
  return e;
}

double generation_loss_fixed(const GenBatch<double>& b, const GenLossWeights& w, const EdgeSets& e) {
  auto edge = [](const G& p, const G& ep, const Bits& gt) {
    return dice_loss<double>(p * ep, edge_regions(BinaryRaster(gt)).pixels).value;
  };
  auto stage = [&](const G& p, const G& ep, const Bits& gt) {
    return w.w_bce * bce_loss<double>(p, gt).value + w.w_dice * dice_loss<double>(p, gt).value +
           w.w_edge * edge(p, ep, gt);
  };
  double rec = 0;
  int matched = 0;
  for (size_t i = 0; i < b.mask_pred.size(); ++i) {
    if (!b.gt_mask[i]) continue;
    rec += w.w_mask * stage(b.mask_pred[i], e.mask[i], *b.gt_mask[i]) +
           w.w_contour * stage(b.contour_pred[i], e.contour[i], *b.gt_contour[i]);
    ++matched;
  }
  double sac = 0, pac = 0;
  if (!b.sac.empty())
    sac = 0.5 * (sac_loss<double>(b.mask_pred, b.sac, w.tau).value + sac_loss<double>(b.contour_pred, b.sac, w.tau).value);
  for (auto [i, ref] : b.pac)
    pac += 0.5 / b.pac.size() *
           (std::max(0.0, w.margin - edge(b.mask_pred[i], e.mask[i], *b.gt_mask[ref])) +
            std::max(0.0, w.margin - edge(b.contour_pred[i], e.contour[i], *b.gt_contour[ref])));
  return w.w_rec * rec / matched + w.w_con * (sac + pac);
}

bool run_2(const Context&, Tally& t) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(5);
  FdCount bce, dice, edge, sim, sac, pac, rec, gen, vfl, focal, fppl, fpv, l1, giou, iou, det;
  for (int trial = 0; trial < 3; ++trial) {
    const G p = random_prob(16, rng), p2 = random_prob(16, rng);
    const Bits tg = random_bits(16, rng);
    raster_fd(bce, p, bce_loss<double>(p, tg).grad, [&](const G& x) { return bce_loss<double>(x, tg).value; });
    raster_fd(dice, p, dice_loss<double>(p, tg).grad, [&](const G& x) { return dice_loss<double>(x, tg).value; });
    raster_fd(edge, p, edge_dice_loss<double>(p, tg).grad, [&](const G& x) { return edge_dice_loss<double>(x, tg).value; });
    const auto s = dice_similarity<double>(p, p2);
    raster_fd(sim, p, s.grad_a, [&](const G& x) { return dice_similarity<double>(x, p2).value; });
    raster_fd(sim, p2, s.grad_b, [&](const G& x) { return dice_similarity<double>(p, x).value; });
  }
  {
    std::vector<G> pool;
    for (int i = 0; i < 4; ++i) pool.push_back(random_prob(12, rng));
    const std::vector<SacItem> items{{0, 1, {2, 3}}, {1, 0, {2, 3}}, {2, 3, {0}}};
    for (bool literal : {false, true}) {
      const auto l = sac_loss<double>(pool, items, 0.07, literal);
      for (int k = 0; k < 4; ++k)
        raster_fd(sac, pool[k], l.grads[k], [&](const G& x) {
          auto p2 = pool;
          p2[k] = x;
          return sac_loss<double>(p2, items, 0.07, literal).value;
        });
    }
  }
  {
    const Bits a = blob_bits(16, rng), b = blob_bits(16, rng);
    const std::vector<G> preds{random_prob(16, rng), random_prob(16, rng)};
    const std::vector<const Bits*> gts{&a, &b};
    const double m = 1.0;  // inside the hinge for both predictions
    const auto l = pac_loss<double>(preds, gts, m);
    for (int k = 0; k < 2; ++k)
      raster_fd(pac, preds[k], l.grads[k], [&](const G& x) {
        auto p2 = preds;
        p2[k] = x;
        return pac_loss<double>(p2, gts, m).value;
      });
  }
  {
    const G m = random_prob(16, rng), c = random_prob(16, rng);
    const Bits gm = random_bits(16, rng), gc = random_bits(16, rng);
    GenLossWeights w;
    const auto r = reconstruction_loss<double>(m, c, gm, gc, w);
    raster_fd(rec, m, r.grad_mask, [&](const G& x) { return reconstruction_loss<double>(x, c, gm, gc, w).total; });
    raster_fd(rec, c, r.grad_contour, [&](const G& x) { return reconstruction_loss<double>(m, x, gm, gc, w).total; });
  }
  {
    std::vector<Bits> gts;
    for (int i = 0; i < 4; ++i) gts.push_back(random_bits(12, rng));
    GenBatch<double> b;
    for (int i = 0; i < 4; ++i) b.mask_pred.push_back(random_prob(12, rng)), b.contour_pred.push_back(random_prob(12, rng));
    b.gt_mask = {&gts[0], &gts[1], nullptr, nullptr};
    b.gt_contour = {&gts[2], &gts[3], nullptr, nullptr};
    b.sac = {{0, 2, {1, 3}}, {1, 3, {0, 2}}};
    b.pac = {{2, 0}, {3, 1}};
    GenLossWeights w;
    w.margin = 1.0;
    const auto r = total_generation_loss(b, w);
    const EdgeSets es = edge_sets(b);
    t.near("recomposed generation loss equals the total", generation_loss_fixed(b, w, es), r.total, 1e-9);
    for (int k = 0; k < 4; ++k) {
      raster_fd(gen, b.mask_pred[k], r.grad_mask[k], [&](const G& x) {
        auto b2 = b;
        b2.mask_pred[k] = x;
        return generation_loss_fixed(b2, w, es);
      });
      raster_fd(gen, b.contour_pred[k], r.grad_contour[k], [&](const G& x) {
        auto b2 = b;
        b2.contour_pred[k] = x;
        return generation_loss_fixed(b2, w, es);
      });
    }
  }
  {
    DetLossWeights w;
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int i = 0; i < 40; ++i) {
      const double p = u(rng), tt = i % 3 == 0 ? 0.0 : u(rng);
      scalar_fd(vfl, p, varifocal_term(p, tt, w).grad, [&](double x) { return varifocal_term(x, tt, w).value; });
      const double tb = i % 2;
      scalar_fd(focal, p, focal_term(p, tb, 0.25, 2.0, 1e-7).grad,
                [&](double x) { return focal_term(x, tb, 0.25, 2.0, 1e-7).value; });
      for (bool literal : {false, true}) {
        w.fppl_literal = literal;
        scalar_fd(fppl, p, fppl_term(p, w).grad, [&](double x) { return fppl_term(x, w).value; });
      }
      w.fppl_literal = false;
    }
    std::vector<double> ps;
    for (int i = 0; i < 6; ++i) ps.push_back(u(rng));
    const auto fl = fppl_loss<double>(ps, w);
    for (int i = 0; i < 6; ++i)
      scalar_fd(fpv, ps[i], fl.grad[i], [&](double x) {
        auto q = ps;
        q[i] = x;
        return fppl_loss<double>(q, w).value;
      });
  }
  {
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<std::array<double, 4>> pb, gb;
    for (int i = 0; i < 5; ++i) {
      pb.push_back({u(rng), u(rng), u(rng), u(rng)});
      gb.push_back({u(rng), u(rng), u(rng), u(rng)});
    }
    const auto l = bbox_l1_loss<double>(pb, gb);
    for (int i = 0; i < 20; ++i)
      scalar_fd(l1, pb[i / 4][i % 4], l.grad[i], [&](double x) {
        auto q = pb;
        q[i / 4][i % 4] = x;
        return bbox_l1_loss<double>(q, gb).value;
      });
    for (int trial = 0; trial < 50; ++trial) {
      std::array<double, 4> a{u(rng), u(rng), 0, 0}, b{u(rng), u(rng), 0, 0};
      a[2] = a[0] + 0.05 + u(rng);
      a[3] = a[1] + 0.05 + u(rng);
      b[2] = b[0] + 0.05 + u(rng);
      b[3] = b[1] + 0.05 + u(rng);
      for (int j = 0; j < 4; ++j) {
        auto f = [&](auto loss) {
          return [&, loss](double x) {
            auto c = a;
            c[j] = x;
            return loss(c, b).value;
          };
        };
        scalar_fd(giou, a[j], giou_loss(a, b).grad[j], f([](auto& p, auto& g) { return giou_loss(p, g); }));
        scalar_fd(iou, a[j], iou_loss(a, b).grad[j], f([](auto& p, auto& g) { return iou_loss(p, g); }));
      }
    }
  }
  {
    DetLossWeights w;
    for (int trial = 0; trial < 5; ++trial) {
      const auto out = random_output(8, 3, rng);
      const auto gts = random_gts(1 + trial % 4, 3, rng);
      const auto r = total_detection_loss(out, gts, w);
      const auto tg = iou_targets(out, gts, r.assignment);
      t.near("recomposed detection loss equals the total", detection_loss_fixed(out, gts, w, r.assignment, tg), r.total, 1e-9);
      for (int i = 0; i < out.probs.numel(); ++i)
        scalar_fd(det, out.probs.data(i), r.grad_probs.data(i), [&](double x) {
          auto o = out;
          o.probs.data(i) = x;
          return detection_loss_fixed(o, gts, w, r.assignment, tg);
        });
      for (int i = 0; i < out.boxes.numel(); ++i)
        scalar_fd(det, out.boxes.data(i), r.grad_boxes.data(i), [&](double x) {
          auto o = out;
          o.boxes.data(i) = x;
          return detection_loss_fixed(o, gts, w, r.assignment, tg);
        });
    }
  }
  fd_verdict(t, "bce", bce);
  fd_verdict(t, "dice", dice);
  fd_verdict(t, "edge dice", edge);
  fd_verdict(t, "dice similarity", sim);
  fd_verdict(t, "sac", sac);
  fd_verdict(t, "pac", pac);
  fd_verdict(t, "reconstruction", rec);
  fd_verdict(t, "total generation", gen);
  fd_verdict(t, "varifocal", vfl);
  fd_verdict(t, "focal", focal);
  fd_verdict(t, "fppl term", fppl);
  fd_verdict(t, "fppl mean", fpv);
  fd_verdict(t, "bbox l1", l1);
  fd_verdict(t, "giou", giou);
  fd_verdict(t, "iou", iou);
  fd_verdict(t, "total detection", det);

  // Generator end to end: generation loss on a 64x64 batch of two layouts under two conditions each.
  {
    Generator<double> g{tiny_generator()};
    const Tensor<double> two = blob_batch(2, 64, 31);
    Tensor<double> lay_t(Shape{4, 64, 64, 1});
    lay_t.data << two.data, two.data;
    const auto lay = Var<double>::constant(lay_t);
    std::mt19937_64 r2(17);
    std::vector<ProcessCondition> conds;
    for (int i = 0; i < 4; ++i) conds.push_back(random_condition(r2));
    std::vector<Bits> gm, gc;
    for (int i = 0; i < 4; ++i) gm.push_back(blob_bits(64, r2)), gc.push_back(blob_bits(64, r2));
    GenLossWeights w;
    w.margin = 1.0;
    auto batch = [&](const GenerationOutput<double>& o) {
      GenBatch<double> b;
      for (int i = 0; i < 4; ++i) {
        b.mask_pred.push_back(image_of(o.mask_prob.value(), i));
        b.contour_pred.push_back(image_of(o.contour_prob.value(), i));
        b.gt_mask.push_back(&gm[i]);
        b.gt_contour.push_back(&gc[i]);
      }
      b.sac = {{0, 2, {1, 3}}, {2, 0, {1, 3}}, {1, 3, {0, 2}}, {3, 1, {0, 2}}};
      b.pac = {{2, 0}, {0, 2}, {3, 1}, {1, 3}};
      return b;
    };
    EdgeSets es;
    {
      NoGradGuard ng;
      const auto b = batch(g.generate(lay, conds, true));
      es = edge_sets(b);
      t.near("recomposed generator loss equals the total", generation_loss_fixed(b, w, es),
             total_generation_loss(b, w).total, 1e-9);
    }
    auto loss = [&] {
      const auto o = g.generate(lay, conds, true);
      const auto b = batch(o);
      const auto r = total_generation_loss(b, w);
      return custom_loss(generation_loss_fixed(b, w, es), {o.mask_prob, o.contour_prob},
                         {stack_images(r.grad_mask), stack_images(r.grad_contour)});
    };
    Rng prng(5);
    FdCount e2e;
    e2e.add(gradient_check(loss, g.parameters(), 0.004, prng, 1e-5, 1e-3, 1e-8));
    fd_verdict(t, "generator end to end", e2e);
  }
  // Detector end to end at 64x64, dual input.
  {
    Detector<double> d{tiny_detector(Task::lrc)};
    const auto c = Var<double>::constant(blob_batch(1, 64, 8));
    const auto l = Var<double>::constant(blob_batch(1, 64, 9));
    const std::vector<GtBox> gts{{0, {0.3, 0.4, 0.2, 0.1}}, {1, {0.7, 0.6, 0.15, 0.3}}};
    DetLossWeights w;
    Assignment fixed;
    std::vector<double> targets;
    const int q = d.config().queries;
    auto output = [&](const DetForward<double>& f) {
      const int k = f.probs.back().dim(2);
      return DetectorOutput<double>{f.probs.back().value().reshaped({q, k}), f.boxes.back().value().reshaped({q, 4})};
    };
    {
      NoGradGuard ng;
      const auto o = output(d.forward({c, l}));
      fixed = hungarian_match(o, gts, w);
      targets = iou_targets(o, gts, fixed);
    }
    auto loss = [&] {
      const auto f = d.forward({c, l});
      const auto o = output(f);
      const auto r = total_detection_loss(o, gts, w, &fixed);
      return custom_loss(detection_loss_fixed(o, gts, w, fixed, targets), {f.probs.back(), f.boxes.back()},
                         {r.grad_probs.reshaped(f.probs.back().shape()), r.grad_boxes.reshaped(f.boxes.back().shape())});
    };
    Rng prng(9);
    FdCount e2e;
    e2e.add(gradient_check(loss, d.parameters(), 0.02, prng, 1e-5, 1e-3, 1e-8));
    fd_verdict(t, "detector end to end", e2e);
  }
  time_limit(t, t0, 300);
  return t.ok();
}

// ------------------------------------------------------------- criterion 3

bool run_3(const Context&, Tally& t) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(21);
  DetLossWeights w;
  long exact = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int q = 1 + trial % 6;
    const int n = 1 + int(rng() % q);
    const auto out = random_output(q, 3, rng);
    const auto gts = random_gts(n, 3, rng);
    const Eigen::MatrixXd c = matching_cost(out, gts, w);
    std::vector<int> cols(q);
    std::iota(cols.begin(), cols.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0;
      for (int i = 0; i < n; ++i) s += c(i, cols[i]);
      best = std::min(best, s);
    } while (std::next_permutation(cols.begin(), cols.end()));
    const auto a = hungarian_match(out, gts, w);
    std::set<int> used(a.gt_to_query.begin(), a.gt_to_query.end());
    exact += a.cost == best && used.size() == size_t(n);
  }
  t.truth("exact optimum on 200 instances", exact == 200, std::to_string(exact) + "/200");
  time_limit(t, t0, 10);
  return t.ok();
}

// ------------------------------------------------------------- criterion 4

HotspotAnnotation gt_box(int x0, int y0, int x1, int y1, HotspotClass k = HotspotClass::epe) {
  return {Task::lrc, k, PixelBox{x0, y0, x1, y1}};
}

Detection det_px(double x0, double y0, double x1, double y1, double conf, HotspotClass k = HotspotClass::epe) {
  return {Task::lrc, k, NormBox{(x0 + x1) / 200, (y0 + y1) / 200, (x1 - x0) / 100, (y1 - y0) / 100}, conf};
}

ImageDetections image100(std::vector<Detection> d, std::vector<HotspotAnnotation> g) {
  return {std::move(d), std::move(g), 100, 100};
}

// Every distinct confidence as a threshold, precision envelope over recall.
double sweep_ap(const std::vector<ImageDetections>& images, HotspotClass k) {
  std::set<double> thresholds;
  long n_gt = 0;
  for (const auto& img : images) {
    for (const auto& d : img.dets)
      if (d.klass == k) thresholds.insert(d.confidence);
    for (const auto& g : img.gts) n_gt += g.klass == k;
  }
  std::vector<std::pair<double, double>> pr;
  for (double th : thresholds) {
    long tp = 0, fp = 0;
    for (const auto& img : images) {
      ImageDetections sub{{}, {}, img.width, img.height};
      for (const auto& d : img.dets)
        if (d.klass == k && d.confidence >= th) sub.dets.push_back(d);
      for (const auto& g : img.gts)
        if (g.klass == k) sub.gts.push_back(g);
      const auto m = match_detections(sub, {0.5, -1.0, false});
      tp += m.tp;
      fp += m.fp;
    }
    pr.push_back({double(tp) / n_gt, tp + fp ? double(tp) / (tp + fp) : 0.0});
  }
  std::set<double> recalls;
  for (auto [r, p] : pr) recalls.insert(r);
  double ap = 0, prev = 0;
  for (double r : recalls) {
    double best = 0;
    for (auto [r2, p2] : pr)
      if (r2 >= r) best = std::max(best, p2);
    ap += (r - prev) * best;
    prev = r;
  }
  return ap;
}

bool run_4(const Context&, Tally& t) {
  std::vector<ImageDetections> ex{
      image100({det_px(0, 0, 10, 10, 0.9), det_px(40, 40, 50, 50, 0.8), det_px(20, 20, 30, 30, 0.7)},
               {gt_box(0, 0, 10, 10), gt_box(20, 20, 30, 30)})};
  t.near("worked example = 5/6", average_precision(ex), 5.0 / 6.0, 1e-12);
  t.truth("worked example prints 0.8333", fmt_double(average_precision(ex)) == "0.8333");

  auto low = image100({det_px(10, 10, 20, 20, 0.55)}, {gt_box(10, 10, 20, 20)});
  const auto ml = match_detections(low);
  t.truth("confidence 0.55 ignored", ml.tp == 0 && ml.fp == 0 && ml.det_status[0] == -1);
  const double ov = 20 * 0.49 / 1.49;
  auto shifted = image100({det_px(10 - ov, 0, 20 - ov, 10, 0.9)}, {gt_box(0, 0, 10, 10)});
  t.near("shifted box IoU", iou(to_corners(shifted.dets[0].box, 100, 100), to_corners(shifted.gts[0].bbox)), 0.49, 1e-9);
  const auto ms = match_detections(shifted);
  t.truth("IoU 0.49 is a false positive", ms.tp == 0 && ms.fp == 1);
  auto dup = image100({det_px(10, 10, 20, 20, 0.8), det_px(10, 10, 20, 21, 0.9)}, {gt_box(10, 10, 20, 20)});
  const auto md = match_detections(dup);
  t.truth("duplicate gives 1 TP + 1 FP", md.tp == 1 && md.fp == 1);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  const HotspotClass classes[3] = {HotspotClass::pinch, HotspotClass::bridge, HotspotClass::epe};
  int agree = 0;
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ImageDetections> imgs;
    for (int i = 0; i < 1 + trial % 5; ++i) {
      ImageDetections img = image100({}, {});
      for (int g = 0; g < 1 + int(rng() % 4); ++g) {
        const int x = int(rng() % 80), y = int(rng() % 80);
        img.gts.push_back(gt_box(x, y, x + 8 + int(rng() % 10), y + 8 + int(rng() % 10), classes[g % 3]));
      }
      for (int d = 0; d < 2 + int(rng() % 6); ++d) {
        const auto& g = img.gts[d % img.gts.size()];
        const double jx = (u(rng) - 0.5) * 10, jy = (u(rng) - 0.5) * 10;
        img.dets.push_back(det_px(g.bbox.x_min + jx, g.bbox.y_min + jy, g.bbox.x_max + jx, g.bbox.y_max + jy,
                                  std::round(u(rng) * 20) / 20, classes[rng() % 3]));
      }
      imgs.push_back(img);
    }
    std::set<HotspotClass> present;
    for (const auto& img : imgs)
      for (const auto& g : img.gts) present.insert(g.klass);
    double oracle = 0;
    for (auto k : present) oracle += sweep_ap(imgs, k);
    oracle /= present.size();
    const double err = std::abs(average_precision(imgs) - oracle);
    worst = std::max(worst, err);
    agree += err <= 1e-9;
  }
  t.truth("AP equals the threshold sweep on 50 fixtures", agree == 50,
          std::to_string(agree) + "/50, worst " + std::to_string(worst));
  return t.ok();
}

// ------------------------------------------------------------- criterion 5

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) {
      std::ifstream in(e.path(), std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      out[fs::relative(e.path(), root).string()] = ss.str();
    }
  return out;
}

bool contains(const BinaryRaster& outer, const BinaryRaster& inner) {
  return outer.same_shape(inner) && ((inner.pixels == 0) || (outer.pixels != 0)).all();
}

bool run_5(const Context& ctx, Tally& t) {
  CorpusConfig cfg = CorpusConfig::from_config(KeyValueConfig::load(ctx.configs / "fixture_corpus.cfg"));
  const fs::path a = ctx.work / "c5" / "a", b = ctx.work / "c5" / "b";
  fs::remove_all(ctx.work / "c5");
  cfg.workers = 1;
  const auto ma = build_corpus(cfg, a);
  cfg.workers = 3;
  const auto mb = build_corpus(cfg, b);
  const auto ta = tree_bytes(a), tb = tree_bytes(b);
  t.truth("regeneration is byte-identical", ta == tb && !ta.empty(), std::to_string(ta.size()) + " files");
  t.truth("content hashes agree", ma.content_hash == mb.content_hash);

  long same = 0;
  std::vector<Sample> samples;
  for (const auto& r : ma.records) {
    samples.push_back(load_sample(a, ma, r));
    same += simulate_contour(samples.back().mask, samples.back().condition, cfg.optics) == samples.back().contour;
  }
  t.truth("stored contour is the simulated contour", same == long(samples.size()) && same > 0,
          std::to_string(same) + "/" + std::to_string(samples.size()));

  std::mt19937_64 rng(99);
  long mono = 0;
  for (int i = 0; i < 500; ++i) {
    const auto& s = samples[rng() % samples.size()];
    ProcessCondition c = random_condition(rng);
    c.dose = 1.0;
    const auto lo = simulate_contour(s.mask, c, cfg.optics);
    c.dose = 1.2;
    const auto hi = simulate_contour(s.mask, c, cfg.optics);
    mono += contains(hi, lo);
  }
  t.truth("dose monotonicity on 500 pairs", mono == 500, std::to_string(mono) + "/500");
  fs::remove_all(ctx.work / "c5");
  return t.ok();
}

// ------------------------------------------------------------- criterion 6

bool run_6(const Context&, Tally& t) {
  Tensor<double> q(Shape{1, 2, 2}), k(Shape{1, 3, 2}), v(Shape{1, 3, 2});
  const double qv[] = {1.0, 0.5, -0.3, 2.0};
  const double kv[] = {0.2, 1.0, -1.0, 0.4, 0.7, -0.6};
  const double vv[] = {1, 2, 3, 4, 5, 6};
  for (int i = 0; i < 4; ++i) q.data(i) = qv[i];
  for (int i = 0; i < 6; ++i) k.data(i) = kv[i], v.data(i) = vv[i];
  Tensor<double> probs;
  const auto out = attention<double>(Var<double>::constant(q), Var<double>::constant(k), Var<double>::constant(v), 1,
                                     std::nullopt, nullptr, &probs);
  double worst = 0;
  for (int i = 0; i < 2; ++i) {
    double l[3], z = 0;
    for (int j = 0; j < 3; ++j) {
      l[j] = std::exp((qv[2 * i] * kv[2 * j] + qv[2 * i + 1] * kv[2 * j + 1]) / std::sqrt(2.0));
      z += l[j];
    }
    for (int c = 0; c < 2; ++c) {
      double e = 0;
      for (int j = 0; j < 3; ++j) e += l[j] / z * vv[2 * j + c];
      worst = std::max(worst, std::abs(out.value().data(2 * i + c) - e));
    }
    for (int j = 0; j < 3; ++j) worst = std::max(worst, std::abs(probs.data(3 * i + j) - l[j] / z));
  }
  t.truth("hand 2x3 single-head case", worst <= 1e-6, "max error " + std::to_string(worst));

  Generator<double> g{tiny_generator()};
  NoGradGuard ng;
  std::mt19937_64 rng(6);
  double row_err = 0, lowest = 1;
  long rows = 0;
  for (int call = 0; call < 100; ++call) {
    const int b = 1 + call % 2;
    std::vector<ProcessCondition> conds;
    for (int i = 0; i < b; ++i) conds.push_back(random_condition(rng));
    const auto lay = g.encode_layout(Var<double>::constant(blob_batch(b, 64, 1000 + call)));
    const auto f = g.fuse(g.encode_process(conds, std::nullopt), lay);
    const Tensor<double>& a = f.attention_maps;
    const int n = a.dim(3);
    for (long r = 0; r < a.numel() / n; ++r, ++rows) {
      double s = 0;
      for (int j = 0; j < n; ++j) s += a.data(r * n + j), lowest = std::min(lowest, a.data(r * n + j));
      row_err = std::max(row_err, std::abs(s - 1));
    }
  }
  t.truth("attention rows sum to 1 over 100 fusion calls", row_err <= 1e-5 && lowest >= 0,
          std::to_string(rows) + " rows, worst " + std::to_string(row_err));
  return t.ok();
}

// ------------------------------------------------------ training criteria

fs::path fixture_corpus(const Context& ctx) {
  const fs::path dir = ctx.work / "fixture";
  if (!fs::exists(dir / "manifest.jsonl"))
    build_corpus(CorpusConfig::from_config(KeyValueConfig::load(ctx.configs / "fixture_corpus.cfg")), dir);
  return dir;
}

RunConfig run_config(const Context& ctx, const std::string& file, const std::map<std::string, std::string>& overrides) {
  static const std::map<std::string, std::string> phases{
      {"fixture_gen.cfg", "gen_pretrain"}, {"fixture_det.cfg", "det_pretrain"}, {"fixture_joint.cfg", "joint_finetune"}};
  KeyValueConfig kv = KeyValueConfig::load(ctx.configs / file);
  kv.set("run.phase", phases.at(file));
  kv.set("run.corpus", fixture_corpus(ctx).string());
  for (const auto& [k, v] : overrides) kv.set(k, v);
  return RunConfig::from_config(kv);
}

// Trains (or resumes) into `dir` and returns the final checkpoint path.
fs::path train(const RunConfig& cfg, const fs::path& dir) {
  TrainOptions opt;
  opt.out_dir = dir;
  opt.resume = true;
  const auto t0 = Clock::now();
  const TrainResult r = run_training(cfg, opt);
  std::cout << "  " << to_string(cfg.phase) << " -> " << r.final_path.string() << " (" << fmt_double(seconds_since(t0), 1)
            << " s)" << std::endl;
  return r.final_path;
}

EvalReport evaluate(const fs::path& ckpt, const fs::path& corpus, const std::string& task, Split split) {
  EvalOptions opt;
  opt.task = task;
  opt.split = split;
  return evaluate_run(ckpt, corpus, opt);
}

fs::path generator_checkpoint(const Context& ctx) {
  return train(run_config(ctx, "fixture_gen.cfg", {}), ctx.work / "gen");
}

fs::path detector_checkpoint(const Context& ctx, Task task) {
  return train(run_config(ctx, "fixture_det.cfg", {{"run.task", to_string(task)}}), ctx.work / to_string(task));
}

bool run_7(const Context& ctx, Tally& t) {
  const auto t0 = Clock::now();
  const fs::path ck = generator_checkpoint(ctx);
  const auto corpus = fixture_corpus(ctx);
  const auto tr = evaluate(ck, corpus, "gen", Split::train);
  const auto te = evaluate(ck, corpus, "gen", Split::test);
  t.truth("64 training triplets", tr.n_images == 64, std::to_string(tr.n_images));
  t.truth("train mask mIoU >= 0.95", tr.mask_miou >= 0.95, fmt_double(tr.mask_miou));
  t.truth("train contour mIoU >= 0.95", tr.miou >= 0.95, fmt_double(tr.miou));
  t.truth("held-out mask mIoU >= 0.85", te.mask_miou >= 0.85, fmt_double(te.mask_miou));
  t.truth("held-out contour mIoU >= 0.85", te.miou >= 0.85, fmt_double(te.miou));
  time_limit(t, t0, 4 * 3600);
  return t.ok();
}

bool run_8(const Context& ctx, Tally& t) {
  const auto corpus = fixture_corpus(ctx);
  const CorpusManifest m = load_manifest(corpus);
  std::vector<Sample> all = load_split(corpus, m, Split::train);
  for (auto& s : load_split(corpus, m, Split::test)) all.push_back(std::move(s));
  for (Task task : {Task::drc, Task::lrc}) {
    const fs::path ck = detector_checkpoint(ctx, task);
    const auto rep = evaluate(ck, corpus, to_string(task), Split::train);
    const double need = task == Task::drc ? 0.9 : 0.8;
    t.truth(to_string(task) + " train F1 >= " + fmt_double(need, 1), rep.summary.f1 >= need,
            "F1 " + fmt_double(rep.summary.f1) + ", P " + fmt_double(rep.summary.precision) + ", R " +
                fmt_double(rep.summary.recall));
    const Detector<float> d = detector_from(load_checkpoint(ck));
    const int q = d.config().queries;
    long bad = 0, images = 0;
    for (size_t s = 0; s < all.size(); s += 8) {
      std::vector<std::vector<const BinaryRaster*>> ch;
      for (size_t i = s; i < std::min(all.size(), s + 8); ++i) {
        const auto in = detector_inputs(all[i], task);
        ch.resize(in.size());
        for (size_t c = 0; c < in.size(); ++c) ch[c].push_back(in[c]);
      }
      for (const auto& dets : d.detect(task, ch)) bad += int(dets.size()) != q, ++images;
    }
    t.truth(to_string(task) + " one output per query on every image", bad == 0 && images == long(all.size()),
            std::to_string(images) + " images, " + std::to_string(q) + " queries");
  }
  return t.ok();
}

bool run_9(const Context& ctx, Tally& t) {
  const auto corpus = fixture_corpus(ctx);
  const fs::path gen = generator_checkpoint(ctx);
  const fs::path lrc = detector_checkpoint(ctx, Task::lrc);
  const std::map<std::string, std::string> inputs{{"run.gen_checkpoint", gen.string()},
                                                  {"run.det_checkpoint", lrc.string()}, {"run.task", "lrc"}};
  auto pre_over = inputs;
  pre_over["run.steps"] = "0";
  const fs::path pre = train(run_config(ctx, "fixture_joint.cfg", pre_over), ctx.work / "joint_pre");
  const fs::path post = train(run_config(ctx, "fixture_joint.cfg", inputs), ctx.work / "joint");

  const std::string h0 = weight_hash(generator_from(load_checkpoint(gen)).parameters());
  const std::string h1 = weight_hash(generator_from(load_checkpoint(post)).parameters());
  t.truth("generator weights hash-identical", h0 == h1, h0 + " vs " + h1);

  const auto before = simulation_call_count();
  const auto rp = evaluate(pre, corpus, "unified", Split::test);
  const auto rq = evaluate(post, corpus, "unified", Split::test);
  t.truth("unified evaluation makes no oracle calls",
          rp.oracle_calls == 0 && rq.oracle_calls == 0 && simulation_call_count() == before);
  t.truth("test split has LRC hotspots", rq.summary.n_gt > 0, std::to_string(rq.summary.n_gt));
  t.truth("post-fine-tune F1 >= pre-fine-tune F1", rq.summary.f1 >= rp.summary.f1,
          "pre " + fmt_double(rp.summary.f1) + ", post " + fmt_double(rq.summary.f1));
  return t.ok();
}

// ------------------------------------------------------------ criterion 10

bool run_10(const Context& ctx, Tally& t) {
  struct Ablation {
    std::string flag, term, file;
  };
  const std::vector<Ablation> runs{{"no_bce", "bce", "fixture_gen.cfg"}, {"no_dice", "dice", "fixture_gen.cfg"},
                                   {"no_edge", "edge", "fixture_gen.cfg"}, {"no_sac", "sac", "fixture_gen.cfg"},
                                   {"no_pac", "pac", "fixture_gen.cfg"},   {"no_fppl", "fppl", "fixture_det.cfg"}};
  std::set<std::string> echoes;
  const std::map<std::string, std::string> common{
      {"run.steps", "3"}, {"run.batch", "2"}, {"run.log_every", "1"}, {"run.checkpoint_every", "0"}};
  for (const char* file : {"fixture_gen.cfg", "fixture_det.cfg"})
    echoes.insert(run_config(ctx, file, common).echo().dump());
  for (const auto& a : runs) {
    auto over = common;
    over["loss." + a.flag] = "true";
    const RunConfig cfg = run_config(ctx, a.file, over);
    echoes.insert(cfg.echo().dump());
    const fs::path dir = ctx.work / "ablation" / a.flag;
    fs::remove_all(dir);
    TrainOptions opt;
    opt.out_dir = dir;
    const TrainResult r = run_training(cfg, opt);
    bool zero = !r.log.empty();
    std::string seen;
    for (const auto& l : r.log) {
      const auto it = l.terms.find(a.term);
      zero = zero && it != l.terms.end() && it->second == 0.0;
      if (it != l.terms.end()) seen += (seen.empty() ? "" : ",") + fmt_double(it->second, 6);
    }
    t.truth(a.flag + " logs " + a.term + " = 0", zero, seen);
    const auto ck = load_checkpoint(r.final_path);
    t.truth(a.flag + " is echoed into the checkpoint", ck.config.get_bool("loss." + a.flag, false));
  }
  t.truth("every ablation run has a distinct configuration", echoes.size() == runs.size() + 2,
          std::to_string(echoes.size()) + " distinct");
  fs::remove_all(ctx.work / "ablation");
  return t.ok();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lithomt acceptance checks"};
  std::string only;
  Context ctx;
  std::string work = "acceptance", configs = "configs";
  bool verbose = false;
  app.add_option("--only", only, "comma-separated criteria to run (default all)");
  app.add_option("--work", work, "scratch and training directory");
  app.add_option("--configs", configs, "directory holding the fixture configs");
  app.add_flag("--verbose", verbose, "show training logs");
  CLI11_PARSE(app, argc, argv);
  ctx.work = fs::absolute(work);
  ctx.configs = fs::absolute(configs);
  fs::create_directories(ctx.work);
  if (!verbose) spdlog::set_level(spdlog::level::warn);

  const std::vector<std::pair<std::string, std::function<bool(const Context&, Tally&)>>> criteria{
      {"loss identities", run_1},        {"gradients", run_2},          {"matching oracle", run_3},
      {"metric oracle", run_4},          {"corpus determinism", run_5}, {"cross-attention fusion", run_6},
      {"generator overfit", run_7},      {"detector overfit", run_8},   {"unified pipeline", run_9},
      {"ablation plumbing", run_10}};
  std::set<int> selected;
  std::stringstream ss(only);
  for (std::string tok; std::getline(ss, tok, ',');)
    if (!tok.empty()) selected.insert(std::stoi(tok));

  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Tally t;
    if (id >= 7 && id <= 9) t.record_passes();
    bool ok = false;
    const auto t0 = Clock::now();
    try {
      ok = criteria[i].second(ctx, t);
    } catch (const std::exception& e) {
      t.truth("no exception", false, e.what());
    }
    failed += !ok;
    std::cout << "criterion " << id << " " << (ok ? "PASS" : "FAIL") << "  " << criteria[i].first << " ["
              << fmt_double(seconds_since(t0), 1) << " s] " << t.summary() << std::endl;
  }
  return failed ? 1 : 0;
}
