#include "lithomt/tensor/optim.hpp"

#include <algorithm>
#include <cmath>

#include "lithomt/error.hpp"

namespace lmt {

double scheduled_lr(double base, long step, long warmup, long total, double min_ratio) {
  if (warmup > 0 && step < warmup) return base * double(step + 1) / double(warmup);
  const double span = std::max(1L, total - warmup);
  const double progress = std::clamp(double(step - warmup) / span, 0.0, 1.0);
  return base * (min_ratio + (1 - min_ratio) * 0.5 * (1 + std::cos(M_PI * progress)));
}

template <typename T>
double clip_grad_norm(const ParamList<T>& ps, double max_norm) {
  double sq = 0;
  for (const auto& [name, v] : ps)
    if (v.has_grad()) sq += v.grad().data.template cast<double>().square().sum();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (norm > max_norm) {
    const T f = T(max_norm / (norm + 1e-12));
    for (auto [name, v] : ps)
      if (v.has_grad()) v.mutable_grad().data *= f;
  }
  return norm;
}

template <typename T>
Adam<T>::Adam(const ParamList<T>& ps, Options o) : o_(o) {
  for (const auto& [name, v] : ps) {
    m_.push_back(Tensor<T>::zeros(v.shape()));
    v_.push_back(Tensor<T>::zeros(v.shape()));
  }
}

template <typename T>
void Adam<T>::step(const ParamList<T>& ps, double lr) {
  if (ps.size() != m_.size()) throw InputError("Adam: parameter list changed");
  ++t_;
  const double c1 = 1 - std::pow(o_.beta1, double(t_));
  const double c2 = 1 - std::pow(o_.beta2, double(t_));
  const T b1 = T(o_.beta1), b2 = T(o_.beta2);
  const T step = T(lr / c1), eps = T(o_.eps), inv_c2 = T(1.0 / c2), wd = T(o_.weight_decay * lr);
  for (size_t i = 0; i < ps.size(); ++i) {
    Var<T> v = ps[i].second;
    if (!v.has_grad()) continue;
    const auto& g = v.grad().data;
    m_[i].data = b1 * m_[i].data + (T(1) - b1) * g;
    v_[i].data = b2 * v_[i].data + (T(1) - b2) * g.square();
    auto& w = v.mutable_value().data;
    if (o_.weight_decay > 0) w -= wd * w;
    w -= step * m_[i].data / ((v_[i].data * inv_c2).sqrt() + eps);
  }
}

template double clip_grad_norm(const ParamList<float>&, double);
template double clip_grad_norm(const ParamList<double>&, double);
template class Adam<float>;
template class Adam<double>;

}  // namespace lmt
