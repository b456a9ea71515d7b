#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lithomt/tensor/nn.hpp"

namespace lmt {

struct GradCheckReport {
  long checked = 0;
  long passed = 0;
  double worst = 0.0;  // largest relative error seen
  double pass_fraction() const { return checked ? double(passed) / double(checked) : 1.0; }
};

// Compares analytic gradients of a scalar function against central finite
// differences. `loss` must rebuild the graph from the current parameter values.
// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheckReport gradient_check(const std::function<Var<double>()>& loss, const ParamList<double>& params,
                                      double fraction, Rng& rng, double h = 1e-4, double tol = 1e-3,
                                      double floor = 1e-6, long min_per_param = 1) {
  for (auto [name, v] : params) v.zero_grad();
  loss().backward();
  GradCheckReport rep;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto [name, v] : params) {
    const long n = v.value().numel();
    const Tensor<double> analytic = v.has_grad() ? v.grad() : Tensor<double>::zeros(v.shape());
    std::vector<long> picks;
    for (long i = 0; i < n; ++i)
      if (u(rng) < fraction) picks.push_back(i);
    for (long i = 0; picks.size() < static_cast<size_t>(std::min(n, min_per_param)); ++i)
      picks.push_back(static_cast<long>(u(rng) * n) % n);
    for (long i : picks) {
      double& w = v.mutable_value().data(i);
      const double saved = w;
      w = saved + h;
      double up, down;
      {
        NoGradGuard g;
        up = loss().item();
      }
      w = saved - h;
      {
        NoGradGuard g;
        down = loss().item();
      }
      w = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.data(i);
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++rep.checked;
      if (rel < tol) ++rep.passed;
      rep.worst = std::max(rep.worst, rel);
    }
  }
  return rep;
}

}  // namespace lmt
