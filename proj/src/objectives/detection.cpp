#include "lithomt/objectives/detection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lithomt/error.hpp"

namespace lmt {

void DetLossWeights::validate() const {
  for (double v : {w_vfl, w_fppl, w_bbox, w_giou, vfl_alpha, vfl_gamma, fppl_alpha, fppl_gamma, focal_alpha, focal_gamma})
    if (!(v >= 0)) throw ConfigError("detection loss weights must be non-negative");
  if (!(prob_eps > 0 && prob_eps < 0.5)) throw ConfigError("probability clamp must lie in (0, 0.5)");
}

namespace {

template <typename T>
bool clamp_prob(T& p, T eps) {
  if (p <= eps) {
    p = eps;
    return false;
  }
  if (p >= T(1) - eps) {
    p = T(1) - eps;
    return false;
  }
  return true;
}

}  // namespace

template <typename T>
ScalarLoss<T> varifocal_term(T p, T t, const DetLossWeights& w) {
  const bool inside = clamp_prob(p, T(w.prob_eps));
  const T a = T(w.vfl_alpha), g = T(w.vfl_gamma);
  const T weight = a * std::pow(p, g) * (T(1) - t) + t;
  const T bce = t * std::log(p) + (T(1) - t) * std::log(T(1) - p);
  ScalarLoss<T> out;
  out.value = -weight * bce;
  if (inside) {
    const T dweight = a * g * std::pow(p, g - T(1)) * (T(1) - t);
    out.grad = -dweight * bce - weight * (t / p - (T(1) - t) / (T(1) - p));
  }
  return out;
}

template <typename T>
ScalarLoss<T> focal_term(T p, T t, T alpha, T gamma, T eps) {
  const bool inside = clamp_prob(p, eps);
  ScalarLoss<T> out;
  if (t > T(0.5)) {
    out.value = -alpha * std::pow(T(1) - p, gamma) * std::log(p);
    if (inside)
      out.grad = alpha * gamma * std::pow(T(1) - p, gamma - T(1)) * std::log(p) - alpha * std::pow(T(1) - p, gamma) / p;
  } else {
    out.value = -(T(1) - alpha) * std::pow(p, gamma) * std::log(T(1) - p);
    if (inside)
      out.grad = -(T(1) - alpha) * (gamma * std::pow(p, gamma - T(1)) * std::log(T(1) - p) - std::pow(p, gamma) / (T(1) - p));
  }
  return out;
}

template <typename T>
ScalarLoss<T> fppl_term(T p, const DetLossWeights& w) {
  const bool inside = clamp_prob(p, T(w.prob_eps));
  const T a = T(w.fppl_alpha), g = T(w.fppl_gamma);
  const T nl = -std::log(T(1) - p);
  ScalarLoss<T> out;
  if (w.fppl_literal) {
    out.value = a * std::pow(T(1) - p, g) * nl;
    if (inside) out.grad = a * std::pow(T(1) - p, g - T(1)) * (T(1) - g * nl);
  } else {
    out.value = a * std::pow(p, g) * nl;
    if (inside) out.grad = a * (g * std::pow(p, g - T(1)) * nl + std::pow(p, g) / (T(1) - p));
  }
  return out;
}

template <typename T>
VectorLoss<T> fppl_loss(const std::vector<T>& p_neg, const DetLossWeights& w) {
  VectorLoss<T> out;
  out.grad.resize(p_neg.size(), T(0));
  if (p_neg.empty()) return out;
  const T inv = T(1) / T(p_neg.size());
  for (size_t i = 0; i < p_neg.size(); ++i) {
    const auto t = fppl_term(p_neg[i], w);
    out.value += inv * t.value;
    out.grad[i] = inv * t.grad;
  }
  return out;
}

template <typename T>
VectorLoss<T> bbox_l1_loss(const std::vector<std::array<T, 4>>& pred, const std::vector<std::array<T, 4>>& gt) {
  if (pred.size() != gt.size()) throw InputError("bbox_l1_loss: box count mismatch");
  VectorLoss<T> out;
  out.grad.resize(pred.size() * 4, T(0));
  if (pred.empty()) return out;
  const T inv = T(1) / T(pred.size());
  for (size_t i = 0; i < pred.size(); ++i)
    for (int j = 0; j < 4; ++j) {
      const T d = pred[i][j] - gt[i][j];
      out.value += inv * std::abs(d);
      out.grad[i * 4 + j] = d > 0 ? inv : (d < 0 ? -inv : T(0));
    }
  return out;
}

namespace {

template <typename T>
BoxLoss<T> overlap_loss(const std::array<T, 4>& p, const std::array<T, 4>& g, bool generalized) {
  if (!(p[2] > p[0] && p[3] > p[1]) || !(g[2] > g[0] && g[3] > g[1])) throw InputError("giou_loss: degenerate box");
  const T pw = p[2] - p[0], ph = p[3] - p[1];
  const T ap = pw * ph, ag = (g[2] - g[0]) * (g[3] - g[1]);
  const T ix0 = std::max(p[0], g[0]), iy0 = std::max(p[1], g[1]);
  const T ix1 = std::min(p[2], g[2]), iy1 = std::min(p[3], g[3]);
  const T iw = std::max(T(0), ix1 - ix0), ih = std::max(T(0), iy1 - iy0);
  const T inter = iw * ih, uni = ap + ag - inter;
  const T iou = inter / uni;

  const std::array<T, 4> d_ap{-ph, -pw, ph, pw};
  std::array<T, 4> d_inter{};
  if (iw > 0 && ih > 0) {
    d_inter[0] = p[0] > g[0] ? -ih : T(0);
    d_inter[1] = p[1] > g[1] ? -iw : T(0);
    d_inter[2] = p[2] < g[2] ? ih : T(0);
    d_inter[3] = p[3] < g[3] ? iw : T(0);
  }
  BoxLoss<T> out;
  out.iou = iou;
  std::array<T, 4> d_iou{}, d_uni{};
  for (int j = 0; j < 4; ++j) {
    d_uni[j] = d_ap[j] - d_inter[j];
    d_iou[j] = (d_inter[j] * uni - inter * d_uni[j]) / (uni * uni);
  }
  if (!generalized) {
    out.value = T(1) - iou;
    for (int j = 0; j < 4; ++j) out.grad[j] = -d_iou[j];
    return out;
  }
  const T cw = std::max(p[2], g[2]) - std::min(p[0], g[0]);
  const T ch = std::max(p[3], g[3]) - std::min(p[1], g[1]);
  const T c = cw * ch;
  const std::array<T, 4> d_c{p[0] < g[0] ? -ch : T(0), p[1] < g[1] ? -cw : T(0), p[2] > g[2] ? ch : T(0),
                             p[3] > g[3] ? cw : T(0)};
  out.value = T(2) - iou - uni / c;
  for (int j = 0; j < 4; ++j) out.grad[j] = -d_iou[j] - (d_uni[j] * c - uni * d_c[j]) / (c * c);
  return out;
}

template <typename T>
std::array<T, 4> corners_of(const T* cxcywh) {
  const T cx = cxcywh[0], cy = cxcywh[1];
  const T w = std::max(cxcywh[2], T(1e-6)), h = std::max(cxcywh[3], T(1e-6));
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

template <typename T>
std::array<T, 4> corners_of(const NormBox& b) {
  return {T(b.cx - b.w / 2), T(b.cy - b.h / 2), T(b.cx + b.w / 2), T(b.cy + b.h / 2)};
}

// Chain rule from corner gradients to (cx, cy, w, h).
template <typename T>
std::array<T, 4> to_center_grad(const std::array<T, 4>& d) {
  return {d[0] + d[2], d[1] + d[3], (d[2] - d[0]) / 2, (d[3] - d[1]) / 2};
}

}  // namespace

template <typename T>
BoxLoss<T> giou_loss(const std::array<T, 4>& pred, const std::array<T, 4>& gt) {
  return overlap_loss(pred, gt, true);
}

template <typename T>
BoxLoss<T> iou_loss(const std::array<T, 4>& pred, const std::array<T, 4>& gt) {
  return overlap_loss(pred, gt, false);
}

Assignment solve_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows()), m = static_cast<int>(cost.cols());
  if (n > m) throw InputError("hungarian_match: more ground truths than queries");
  Assignment out;
  if (n == 0) return out;
  // Shortest augmenting path with potentials, 1-based rows/cols.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(m + 1, 0);
  std::vector<int> owner(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    owner[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, false);
    do {
      used[j0] = true;
      const int i0 = owner[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const int j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0);
  }
  out.gt_to_query.assign(n, -1);
  for (int j = 1; j <= m; ++j)
    if (owner[j]) out.gt_to_query[owner[j] - 1] = j - 1;
  for (int i = 0; i < n; ++i) out.cost += cost(i, out.gt_to_query[i]);
  return out;
}

template <typename T>
Eigen::MatrixXd matching_cost(const DetectorOutput<T>& out, const std::vector<GtBox>& gts, const DetLossWeights& w) {
  const int q = out.queries(), k = out.classes();
  Eigen::MatrixXd c(gts.size(), q);
  const double a = w.focal_alpha, g = w.focal_gamma, eps = w.prob_eps;
  for (size_t i = 0; i < gts.size(); ++i) {
    if (gts[i].klass < 0 || gts[i].klass >= k) throw InputError("hungarian_match: class index out of range");
    const auto gc = corners_of<double>(gts[i].box);
    const double gb[4] = {gts[i].box.cx, gts[i].box.cy, gts[i].box.w, gts[i].box.h};
    for (int j = 0; j < q; ++j) {
      const double p = std::clamp(double(out.probs.data(j * k + gts[i].klass)), eps, 1 - eps);
      const double cls = a * std::pow(1 - p, g) * -std::log(p) - (1 - a) * std::pow(p, g) * -std::log(1 - p);
      double pb[4];
      for (int d = 0; d < 4; ++d) pb[d] = double(out.boxes.data(j * 4 + d));
      const auto pc = corners_of<double>(pb);
      double geo;
      if (w.iou_only) {
        geo = w.w_giou * overlap_loss(pc, gc, false).value;
      } else {
        double l1 = 0;
        for (int d = 0; d < 4; ++d) l1 += std::abs(pb[d] - gb[d]);
        geo = w.w_bbox * l1 + w.w_giou * overlap_loss(pc, gc, true).value;
      }
      c(i, j) = w.w_vfl * cls + geo;
    }
  }
  return c;
}

template <typename T>
Assignment hungarian_match(const DetectorOutput<T>& out, const std::vector<GtBox>& gts, const DetLossWeights& w) {
  if (static_cast<int>(gts.size()) > out.queries()) throw InputError("hungarian_match: more ground truths than queries");
  return solve_assignment(matching_cost(out, gts, w));
}

template <typename T>
DetLossTerms<T> total_detection_loss(const DetectorOutput<T>& out, const std::vector<GtBox>& gts,
                                     const DetLossWeights& w, const Assignment* fixed) {
  w.validate();
  const int q = out.queries(), k = out.classes();
  if (out.boxes.shape != Shape({q, 4})) throw InputError("total_detection_loss: boxes must be [Q, 4]");
  DetLossTerms<T> r;
  r.assignment = fixed ? *fixed : hungarian_match(out, gts, w);
  if (r.assignment.gt_to_query.size() != gts.size()) throw InputError("total_detection_loss: assignment size mismatch");
  r.grad_probs = Tensor<T>::zeros({q, k});
  r.grad_boxes = Tensor<T>::zeros({q, 4});

  std::vector<int> query_gt(q, -1);
  for (size_t i = 0; i < gts.size(); ++i) query_gt[r.assignment.gt_to_query[i]] = static_cast<int>(i);

  // Constant IoU targets of matched queries.
  std::vector<T> target(gts.size());
  for (size_t i = 0; i < gts.size(); ++i)
    target[i] = T(iou_loss(corners_of<T>(out.boxes.ptr() + r.assignment.gt_to_query[i] * 4), corners_of<T>(gts[i].box)).iou);

  const T inv_q = T(1) / T(q);
  for (int j = 0; j < q; ++j)
    for (int c = 0; c < k; ++c) {
      const int gi = query_gt[j];
      const T t = (gi >= 0 && gts[gi].klass == c) ? target[gi] : T(0);
      const T p = out.probs.data(j * k + c);
      const ScalarLoss<T> l = w.vfl_to_focal
                                  ? focal_term(p, gi >= 0 && gts[gi].klass == c ? T(1) : T(0), T(w.focal_alpha),
                                               T(w.focal_gamma), T(w.prob_eps))
                                  : varifocal_term(p, t, w);
      r.vfl += inv_q * l.value;
      r.grad_probs.data(j * k + c) += T(w.w_vfl) * inv_q * l.grad;
    }

  if (!w.no_fppl) {
    std::vector<T> neg;
    std::vector<int> where;
    for (int j = 0; j < q; ++j)
      if (query_gt[j] < 0)
        for (int c = 0; c < k; ++c) {
          neg.push_back(out.probs.data(j * k + c));
          where.push_back(j * k + c);
        }
    const auto f = fppl_loss(neg, w);
    r.fppl = f.value;
    for (size_t i = 0; i < neg.size(); ++i) r.grad_probs.data(where[i]) += T(w.w_fppl) * f.grad[i];
  }

  if (!gts.empty()) {
    const T inv_n = T(1) / T(gts.size());
    std::vector<std::array<T, 4>> pb, gb;
    for (size_t i = 0; i < gts.size(); ++i) {
      const T* b = out.boxes.ptr() + r.assignment.gt_to_query[i] * 4;
      pb.push_back({b[0], b[1], b[2], b[3]});
      gb.push_back({T(gts[i].box.cx), T(gts[i].box.cy), T(gts[i].box.w), T(gts[i].box.h)});
    }
    if (!w.iou_only) {
      const auto l1 = bbox_l1_loss(pb, gb);
      r.bbox = l1.value;
      for (size_t i = 0; i < gts.size(); ++i)
        for (int d = 0; d < 4; ++d) r.grad_boxes.data(r.assignment.gt_to_query[i] * 4 + d) += T(w.w_bbox) * l1.grad[i * 4 + d];
    }
    for (size_t i = 0; i < gts.size(); ++i) {
      const int j = r.assignment.gt_to_query[i];
      const auto l = w.iou_only ? iou_loss(corners_of<T>(pb[i].data()), corners_of<T>(gts[i].box))
                                : giou_loss(corners_of<T>(pb[i].data()), corners_of<T>(gts[i].box));
      r.giou += inv_n * l.value;
      const auto d = to_center_grad(l.grad);
      for (int e = 0; e < 4; ++e) r.grad_boxes.data(j * 4 + e) += T(w.w_giou) * inv_n * d[e];
    }
  }
  r.total = T(w.w_vfl) * r.vfl + T(w.w_fppl) * r.fppl + T(w.w_bbox) * r.bbox + T(w.w_giou) * r.giou;
  return r;
}

#define LMT_DET_LOSSES(T)                                                                                         \
  template ScalarLoss<T> varifocal_term(T, T, const DetLossWeights&);                                             \
  template ScalarLoss<T> focal_term(T, T, T, T, T);                                                               \
  template ScalarLoss<T> fppl_term(T, const DetLossWeights&);                                                     \
  template VectorLoss<T> fppl_loss(const std::vector<T>&, const DetLossWeights&);                                 \
  template VectorLoss<T> bbox_l1_loss(const std::vector<std::array<T, 4>>&, const std::vector<std::array<T, 4>>&); \
  template BoxLoss<T> giou_loss(const std::array<T, 4>&, const std::array<T, 4>&);                                \
  template BoxLoss<T> iou_loss(const std::array<T, 4>&, const std::array<T, 4>&);                                 \
  template Eigen::MatrixXd matching_cost(const DetectorOutput<T>&, const std::vector<GtBox>&, const DetLossWeights&); \
  template Assignment hungarian_match(const DetectorOutput<T>&, const std::vector<GtBox>&, const DetLossWeights&); \
  template DetLossTerms<T> total_detection_loss(const DetectorOutput<T>&, const std::vector<GtBox>&,              \
                                                const DetLossWeights&, const Assignment*);

LMT_DET_LOSSES(float)
LMT_DET_LOSSES(double)

}  // namespace lmt
