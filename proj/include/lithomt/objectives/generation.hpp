#pragma once

#include <vector>

#include "lithomt/raster.hpp"

namespace lmt {

inline constexpr double kBceEps = 1e-7;
inline constexpr double kDiceSmooth = 1.0;

struct GenLossWeights {
  double w_rec = 1.0, w_con = 0.5;
  double w_mask = 2.0, w_contour = 1.0;
  double w_dice = 2.0, w_bce = 1.0, w_edge = 0.3;
  double tau = 0.07, margin = 0.5;
  // Ablations: a disabled term is reported as exactly 0.
  bool no_bce = false, no_dice = false, no_edge = false, no_sac = false, no_pac = false;
  bool sac_literal = false;  // negatives-only denominator

  void validate() const;
};

// Scalar loss of one raster and its gradient with respect to that raster.
template <typename T>
struct RasterLoss {
  T value = 0;
  Grid<T> grad;
};

template <typename T> RasterLoss<T> bce_loss(const Grid<T>& pred, const Bits& target);
template <typename T> RasterLoss<T> dice_loss(const Grid<T>& pred, const Bits& target);

BinaryRaster edge_regions(const BinaryRaster& g);

// Dice over the edge pixels of the binarized prediction and of the target.
// The prediction's edge set is held constant for the gradient.
template <typename T> RasterLoss<T> edge_dice_loss(const Grid<T>& pred, const Bits& target);

// Soft Dice similarity of two predictions and its gradients.
template <typename T>
struct Similarity {
  T value = 0;
  Grid<T> grad_a, grad_b;
};
template <typename T> Similarity<T> dice_similarity(const Grid<T>& a, const Grid<T>& b);

// Loss over a pool of predictions; grads[i] belongs to pool entry i (empty when untouched).
template <typename T>
struct PoolLoss {
  T value = 0;
  std::vector<Grid<T>> grads;
};

struct SacItem {
  int anchor = 0;
  int positive = 0;
  std::vector<int> negatives;
};

// InfoNCE over Dice similarities for one anchor: value and derivatives with
// respect to the positive and negative similarities.
template <typename T>
struct SacTerm {
  T value = 0;
  T d_pos = 0;
  std::vector<T> d_neg;
};
template <typename T> SacTerm<T> sac_from_similarity(T s_pos, const std::vector<T>& s_neg, T tau, bool literal = false);

template <typename T>
PoolLoss<T> sac_loss(const std::vector<Grid<T>>& pool, const std::vector<SacItem>& items, T tau, bool literal = false);

// mean_k ReLU(m - edge_dice_loss(preds[k], gts[k])); empty input gives 0.
template <typename T>
PoolLoss<T> pac_loss(const std::vector<Grid<T>>& preds, const std::vector<const Bits*>& gts, T margin);

template <typename T>
struct ReconTerms {
  T mask_bce = 0, mask_dice = 0, mask_edge = 0;
  T contour_bce = 0, contour_dice = 0, contour_edge = 0;
  T mask = 0, contour = 0, total = 0;
  Grid<T> grad_mask, grad_contour;
};

template <typename T>
ReconTerms<T> reconstruction_loss(const Grid<T>& mask_prob, const Grid<T>& contour_prob, const Bits& gt_mask,
                                  const Bits& gt_contour, const GenLossWeights& w);

// Predictions of one training step. Entry i holds the model's mask and
// contour for some (layout, condition); gt_* are the ground truth of that
// same pair when it is a matched pair, null otherwise.
template <typename T>
struct GenBatch {
  std::vector<Grid<T>> mask_pred, contour_pred;
  std::vector<const Bits*> gt_mask, gt_contour;
  std::vector<SacItem> sac;
  // (prediction under another process, index of the matched entry whose ground truth is compared)
  std::vector<std::pair<int, int>> pac;
};

template <typename T>
struct GenLossTerms {
  T rec = 0, sac = 0, pac = 0, contrast = 0, total = 0;
  std::vector<Grid<T>> grad_mask, grad_contour;
};

// w_rec * mean reconstruction over matched entries + w_con * (SAC + PAC);
// SAC and PAC each average their mask and contour versions.
template <typename T> GenLossTerms<T> total_generation_loss(const GenBatch<T>& batch, const GenLossWeights& w);

}  // namespace lmt
