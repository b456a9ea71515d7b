#pragma once

#include <vector>

#include "lithomt/tensor/nn.hpp"

namespace lmt {

// Linear warmup then cosine decay to min_ratio * base.
double scheduled_lr(double base, long step, long warmup, long total, double min_ratio = 0.05);

// Scales gradients so their global L2 norm is at most max_norm. Returns the norm before clipping.
template <typename T>
double clip_grad_norm(const ParamList<T>& ps, double max_norm);

template <typename T>
class Adam {
 public:
  struct Options {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
  };

  Adam() = default;
  Adam(const ParamList<T>& ps, Options o);

  // One update with learning rate lr; parameters without gradients are skipped.
  void step(const ParamList<T>& ps, double lr);

  long steps() const { return t_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  Options o_;
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace lmt
