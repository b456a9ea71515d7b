#include "lithomt/objectives/generation.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "lithomt/error.hpp"
#include "lithomt/morphology.hpp"

namespace lmt {

void GenLossWeights::validate() const {
  for (double v : {w_rec, w_con, w_mask, w_contour, w_dice, w_bce, w_edge, margin})
    if (!(v >= 0)) throw ConfigError("generation loss weights must be non-negative");
  if (!(tau > 0)) throw ConfigError("contrastive temperature must be positive");
}

namespace {

template <typename T>
void require_same(const Grid<T>& a, const Bits& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InputError(std::string(what) + ": raster shape mismatch");
}

template <typename T>
void accumulate(Grid<T>& dst, const Grid<T>& src, T f) {
  if (dst.size() == 0) dst = Grid<T>::Zero(src.rows(), src.cols());
  dst += f * src;
}

}  // namespace

template <typename T>
RasterLoss<T> bce_loss(const Grid<T>& pred, const Bits& target) {
  require_same(pred, target, "bce_loss");
  const T eps = T(kBceEps);
  const Grid<T> g = target.cast<T>();
  const Grid<T> p = pred.max(eps).min(T(1) - eps);
  const T m = T(pred.size());
  RasterLoss<T> out;
  out.value = -(g * p.log() + (T(1) - g) * (T(1) - p).log()).sum() / m;
  const auto inside = pred > eps && pred < T(1) - eps;
  out.grad = inside.select((p - g) / (p * (T(1) - p)) / m, T(0));
  return out;
}

template <typename T>
RasterLoss<T> dice_loss(const Grid<T>& pred, const Bits& target) {
  require_same(pred, target, "dice_loss");
  const T s = T(kDiceSmooth);
  const Grid<T> g = target.cast<T>();
  const T inter = (pred * g).sum(), den = pred.sum() + g.sum() + s;
  RasterLoss<T> out;
  out.value = T(1) - (T(2) * inter + s) / den;
  out.grad = -(T(2) * g * den - (T(2) * inter + s)) / (den * den);
  return out;
}

BinaryRaster edge_regions(const BinaryRaster& g) { return BinaryRaster(morph::edge_regions(g.pixels), g.pitch_nm); }

template <typename T>
RasterLoss<T> edge_dice_loss(const Grid<T>& pred, const Bits& target) {
  require_same(pred, target, "edge_dice_loss");
  const Bits pred_edges = morph::edge_regions((pred >= T(0.5)).template cast<std::uint8_t>());
  const Grid<T> e = pred_edges.cast<T>();
  RasterLoss<T> d = dice_loss<T>(pred * e, morph::edge_regions(target));
  d.grad *= e;
  return d;
}

template <typename T>
Similarity<T> dice_similarity(const Grid<T>& a, const Grid<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InputError("dice_similarity: raster shape mismatch");
  const T s = T(kDiceSmooth);
  const T num = T(2) * (a * b).sum() + s, den = a.sum() + b.sum() + s;
  Similarity<T> out;
  out.value = num / den;
  out.grad_a = (T(2) * b * den - num) / (den * den);
  out.grad_b = (T(2) * a * den - num) / (den * den);
  return out;
}

template <typename T>
SacTerm<T> sac_from_similarity(T s_pos, const std::vector<T>& s_neg, T tau, bool literal) {
  if (s_neg.empty()) throw InputError("sac_loss: an anchor needs at least one negative");
  SacTerm<T> out;
  const T zp = s_pos / tau;
  T zmax = literal ? s_neg[0] / tau : zp;
  for (T s : s_neg) zmax = std::max(zmax, s / tau);
  T den = literal ? T(0) : std::exp(zp - zmax);
  for (T s : s_neg) den += std::exp(s / tau - zmax);
  out.value = -zp + zmax + std::log(den);
  out.d_pos = literal ? -T(1) / tau : (std::exp(zp - zmax) / den - T(1)) / tau;
  for (T s : s_neg) out.d_neg.push_back(std::exp(s / tau - zmax) / den / tau);
  return out;
}

template <typename T>
PoolLoss<T> sac_loss(const std::vector<Grid<T>>& pool, const std::vector<SacItem>& items, T tau, bool literal) {
  if (items.empty()) throw InputError("sac_loss: no anchors");
  PoolLoss<T> out;
  out.grads.resize(pool.size());
  const T inv = T(1) / T(items.size());
  auto at = [&](int i) -> const Grid<T>& {
    if (i < 0 || i >= static_cast<int>(pool.size())) throw InputError("sac_loss: pool index out of range");
    return pool[i];
  };
  for (const auto& it : items) {
    const Similarity<T> pos = dice_similarity(at(it.anchor), at(it.positive));
    std::vector<Similarity<T>> negs;
    std::vector<T> s_neg;
    for (int j : it.negatives) {
      negs.push_back(dice_similarity(at(it.anchor), at(j)));
      s_neg.push_back(negs.back().value);
    }
    const SacTerm<T> term = sac_from_similarity(pos.value, s_neg, tau, literal);
    out.value += inv * term.value;
    accumulate(out.grads[it.anchor], pos.grad_a, inv * term.d_pos);
    accumulate(out.grads[it.positive], pos.grad_b, inv * term.d_pos);
    for (size_t j = 0; j < negs.size(); ++j) {
      accumulate(out.grads[it.anchor], negs[j].grad_a, inv * term.d_neg[j]);
      accumulate(out.grads[it.negatives[j]], negs[j].grad_b, inv * term.d_neg[j]);
    }
  }
  return out;
}

template <typename T>
PoolLoss<T> pac_loss(const std::vector<Grid<T>>& preds, const std::vector<const Bits*>& gts, T margin) {
  if (preds.size() != gts.size()) throw InputError("pac_loss: pair count mismatch");
  PoolLoss<T> out;
  out.grads.resize(preds.size());
  if (preds.empty()) {
    spdlog::warn("pac_loss: empty pair set, term is 0");
    return out;
  }
  const T inv = T(1) / T(preds.size());
  for (size_t k = 0; k < preds.size(); ++k) {
    const RasterLoss<T> e = edge_dice_loss(preds[k], *gts[k]);
    if (margin - e.value > 0) {
      out.value += inv * (margin - e.value);
      accumulate(out.grads[k], e.grad, -inv);
    }
  }
  return out;
}

template <typename T>
ReconTerms<T> reconstruction_loss(const Grid<T>& mask_prob, const Grid<T>& contour_prob, const Bits& gt_mask,
                                  const Bits& gt_contour, const GenLossWeights& w) {
  ReconTerms<T> out;
  auto stage = [&](const Grid<T>& pred, const Bits& gt, T& bce, T& dice, T& edge, Grid<T>& grad) {
    grad = Grid<T>::Zero(pred.rows(), pred.cols());
    T total = 0;
    if (!w.no_bce) {
      auto l = bce_loss(pred, gt);
      bce = l.value;
      total += T(w.w_bce) * l.value;
      grad += T(w.w_bce) * l.grad;
    }
    if (!w.no_dice) {
      auto l = dice_loss(pred, gt);
      dice = l.value;
      total += T(w.w_dice) * l.value;
      grad += T(w.w_dice) * l.grad;
    }
    if (!w.no_edge) {
      auto l = edge_dice_loss(pred, gt);
      edge = l.value;
      total += T(w.w_edge) * l.value;
      grad += T(w.w_edge) * l.grad;
    }
    return total;
  };
  out.mask = stage(mask_prob, gt_mask, out.mask_bce, out.mask_dice, out.mask_edge, out.grad_mask);
  out.contour = stage(contour_prob, gt_contour, out.contour_bce, out.contour_dice, out.contour_edge, out.grad_contour);
  out.total = T(w.w_mask) * out.mask + T(w.w_contour) * out.contour;
  out.grad_mask *= T(w.w_mask);
  out.grad_contour *= T(w.w_contour);
  return out;
}

template <typename T>
GenLossTerms<T> total_generation_loss(const GenBatch<T>& b, const GenLossWeights& w) {
  w.validate();
  const size_t n = b.mask_pred.size();
  if (b.contour_pred.size() != n || b.gt_mask.size() != n || b.gt_contour.size() != n)
    throw InputError("total_generation_loss: inconsistent batch");
  GenLossTerms<T> out;
  out.grad_mask.resize(n);
  out.grad_contour.resize(n);

  int matched = 0;
  for (size_t i = 0; i < n; ++i) matched += b.gt_mask[i] != nullptr;
  if (matched == 0) throw InputError("total_generation_loss: no matched pairs");
  for (size_t i = 0; i < n; ++i) {
    if (!b.gt_mask[i]) continue;
    const auto r = reconstruction_loss(b.mask_pred[i], b.contour_pred[i], *b.gt_mask[i], *b.gt_contour[i], w);
    out.rec += r.total / T(matched);
    accumulate(out.grad_mask[i], r.grad_mask, T(w.w_rec) / T(matched));
    accumulate(out.grad_contour[i], r.grad_contour, T(w.w_rec) / T(matched));
  }

  if (w.w_con > 0) {
    const T half(0.5);
    const T con = T(w.w_con);
    if (!w.no_sac && !b.sac.empty()) {
      const auto sm = sac_loss(b.mask_pred, b.sac, T(w.tau), w.sac_literal);
      const auto sc = sac_loss(b.contour_pred, b.sac, T(w.tau), w.sac_literal);
      out.sac = half * (sm.value + sc.value);
      for (size_t i = 0; i < n; ++i) {
        if (sm.grads[i].size()) accumulate(out.grad_mask[i], sm.grads[i], half * con);
        if (sc.grads[i].size()) accumulate(out.grad_contour[i], sc.grads[i], half * con);
      }
    }
    if (!w.no_pac && !b.pac.empty()) {
      std::vector<Grid<T>> pm, pc;
      std::vector<const Bits*> gm, gc;
      for (auto [pred, ref] : b.pac) {
        if (!b.gt_mask[ref]) throw InputError("total_generation_loss: PAC reference has no ground truth");
        pm.push_back(b.mask_pred[pred]);
        pc.push_back(b.contour_pred[pred]);
        gm.push_back(b.gt_mask[ref]);
        gc.push_back(b.gt_contour[ref]);
      }
      const auto lm = pac_loss(pm, gm, T(w.margin));
      const auto lc = pac_loss(pc, gc, T(w.margin));
      out.pac = half * (lm.value + lc.value);
      for (size_t k = 0; k < b.pac.size(); ++k) {
        const int i = b.pac[k].first;
        if (lm.grads[k].size()) accumulate(out.grad_mask[i], lm.grads[k], half * con);
        if (lc.grads[k].size()) accumulate(out.grad_contour[i], lc.grads[k], half * con);
      }
    }
  }
  out.contrast = out.sac + out.pac;
  out.total = T(w.w_rec) * out.rec + T(w.w_con) * out.contrast;
  for (size_t i = 0; i < n; ++i) {
    if (!out.grad_mask[i].size()) out.grad_mask[i] = Grid<T>::Zero(b.mask_pred[i].rows(), b.mask_pred[i].cols());
    if (!out.grad_contour[i].size())
      out.grad_contour[i] = Grid<T>::Zero(b.contour_pred[i].rows(), b.contour_pred[i].cols());
  }
  return out;
}

#define LMT_GEN_LOSSES(T)                                                                                          \
  template RasterLoss<T> bce_loss(const Grid<T>&, const Bits&);                                                    \
  template RasterLoss<T> dice_loss(const Grid<T>&, const Bits&);                                                   \
  template RasterLoss<T> edge_dice_loss(const Grid<T>&, const Bits&);                                              \
  template Similarity<T> dice_similarity(const Grid<T>&, const Grid<T>&);                                          \
  template SacTerm<T> sac_from_similarity(T, const std::vector<T>&, T, bool);                                      \
  template PoolLoss<T> sac_loss(const std::vector<Grid<T>>&, const std::vector<SacItem>&, T, bool);                \
  template PoolLoss<T> pac_loss(const std::vector<Grid<T>>&, const std::vector<const Bits*>&, T);                  \
  template ReconTerms<T> reconstruction_loss(const Grid<T>&, const Grid<T>&, const Bits&, const Bits&,             \
                                             const GenLossWeights&);                                               \
  template GenLossTerms<T> total_generation_loss(const GenBatch<T>&, const GenLossWeights&);

LMT_GEN_LOSSES(float)
LMT_GEN_LOSSES(double)

}  // namespace lmt
