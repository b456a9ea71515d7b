#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

#include "lithomt/detection.hpp"
#include "lithomt/tensor/tensor.hpp"

namespace lmt {

struct DetLossWeights {
  double w_vfl = 1.0, w_fppl = 1.5, w_bbox = 5.0, w_giou = 2.0;
  double vfl_alpha = 0.75, vfl_gamma = 0.5;
  double fppl_alpha = 0.25, fppl_gamma = 2.0;
  double focal_alpha = 0.25, focal_gamma = 2.0;  // matching cost and the focal ablation
  double prob_eps = 1e-7;
  // Ablations.
  bool no_fppl = false, vfl_to_focal = false, iou_only = false, fppl_literal = false;

  void validate() const;
};

template <typename T>
struct ScalarLoss {
  T value = 0;
  T grad = 0;  // d value / d p
};

// -w [t log p + (1-t) log(1-p)] with w = alpha p^gamma (1-t) + t; the gradient includes dw/dp.
template <typename T> ScalarLoss<T> varifocal_term(T p, T t, const DetLossWeights& w);
// Binary focal loss with target t in {0,1}.
template <typename T> ScalarLoss<T> focal_term(T p, T t, T alpha, T gamma, T eps);
// alpha p^gamma (-log(1-p)); literal form uses (1-p)^gamma.
template <typename T> ScalarLoss<T> fppl_term(T p, const DetLossWeights& w);

template <typename T>
struct VectorLoss {
  T value = 0;
  std::vector<T> grad;
};
template <typename T> VectorLoss<T> fppl_loss(const std::vector<T>& p_neg, const DetLossWeights& w);

// (1/n) sum_i |pred_i - gt_i|_1 over (cx, cy, w, h) boxes.
template <typename T>
VectorLoss<T> bbox_l1_loss(const std::vector<std::array<T, 4>>& pred, const std::vector<std::array<T, 4>>& gt);

// 1 - GIoU of corner boxes (x0, y0, x1, y1); gradient with respect to the predicted corners.
template <typename T>
struct BoxLoss {
  T value = 0;
  std::array<T, 4> grad{};
  T iou = 0;
};
template <typename T> BoxLoss<T> giou_loss(const std::array<T, 4>& pred, const std::array<T, 4>& gt);
// 1 - IoU with the same conventions.
template <typename T> BoxLoss<T> iou_loss(const std::array<T, 4>& pred, const std::array<T, 4>& gt);

// Ground truth in the detector's normalized frame.
struct GtBox {
  int klass = 0;
  NormBox box;
};

struct Assignment {
  std::vector<int> gt_to_query;  // gt i is matched with query gt_to_query[i]
  double cost = 0;               // sum over gts in index order
};

// Minimum-cost one-to-one assignment of rows to distinct columns (rows <= cols).
Assignment solve_assignment(const Eigen::MatrixXd& cost);

// Raw detector output for one image: per-query class probabilities [Q, K]
// and boxes [Q, 4] in normalized (cx, cy, w, h).
template <typename T>
struct DetectorOutput {
  Tensor<T> probs, boxes;
  int queries() const { return probs.dim(0); }
  int classes() const { return probs.dim(1); }
};

// Pairwise matching cost [gts x queries]: focal-style class cost * w_vfl +
// w_bbox * L1 + w_giou * (1 - GIoU).
template <typename T>
Eigen::MatrixXd matching_cost(const DetectorOutput<T>& out, const std::vector<GtBox>& gts, const DetLossWeights& w);

template <typename T>
Assignment hungarian_match(const DetectorOutput<T>& out, const std::vector<GtBox>& gts, const DetLossWeights& w);

template <typename T>
struct DetLossTerms {
  T vfl = 0, fppl = 0, bbox = 0, giou = 0, total = 0;
  Tensor<T> grad_probs, grad_boxes;
  Assignment assignment;
};

// w_vfl L_vfl + w_fppl L_fppl + w_bbox L_bbox + w_giou L_giou. IoU targets and
// the assignment are constants for the gradient.
template <typename T>
DetLossTerms<T> total_detection_loss(const DetectorOutput<T>& out, const std::vector<GtBox>& gts,
                                     const DetLossWeights& w, const Assignment* fixed = nullptr);

}  // namespace lmt
