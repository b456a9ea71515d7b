#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lithomt/tensor/ops.hpp"

namespace lmt {

using Rng = std::mt19937_64;

template <typename T>
using ParamList = std::vector<std::pair<std::string, Var<T>>>;

template <typename T>
Var<T> param_uniform(Shape s, T bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor<T> t(std::move(s));
  for (Eigen::Index i = 0; i < t.numel(); ++i) t.data(i) = T(u(rng));
  return Var<T>::leaf(std::move(t));
}

template <typename T>
Var<T> param_normal(Shape s, T stddev, Rng& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Tensor<T> t(std::move(s));
  for (Eigen::Index i = 0; i < t.numel(); ++i) t.data(i) = T(n(rng));
  return Var<T>::leaf(std::move(t));
}

template <typename T>
Var<T> param_const(Shape s, T value) {
  return Var<T>::leaf(Tensor<T>(std::move(s), value));
}

template <typename T>
struct Linear {
  Var<T> w, b;
  Linear() = default;
  Linear(int in, int out, Rng& rng, bool bias = true)
      : w(param_uniform<T>({in, out}, T(std::sqrt(6.0 / (in + out))), rng)) {
    if (bias) b = param_const<T>({out}, T(0));
  }
  Var<T> operator()(const Var<T>& x) const { return b.defined() ? linear(x, w, b) : linear(x, w); }
  void collect(const std::string& p, ParamList<T>& out) const {
    out.push_back({p + ".w", w});
    if (b.defined()) out.push_back({p + ".b", b});
  }
};

template <typename T>
struct LayerNorm {
  Var<T> gain, shift;
  LayerNorm() = default;
  explicit LayerNorm(int c) : gain(param_const<T>({c}, T(1))), shift(param_const<T>({c}, T(0))) {}
  Var<T> operator()(const Var<T>& x) const { return layer_norm(x, gain, shift); }
  void collect(const std::string& p, ParamList<T>& out) const {
    out.push_back({p + ".gain", gain});
    out.push_back({p + ".shift", shift});
  }
};

// NHWC convolution with He-initialized weights [k*k*cin, cout].
template <typename T>
struct Conv {
  Var<T> w, b;
  int k = 3, stride = 1, pad = 1;
  Conv() = default;
  Conv(int cin, int cout, int k_, int stride_, int pad_, Rng& rng, bool bias = true)
      : w(param_normal<T>({k_ * k_ * cin, cout}, T(std::sqrt(2.0 / (k_ * k_ * cin))), rng)),
        k(k_), stride(stride_), pad(pad_) {
    if (bias) b = param_const<T>({cout}, T(0));
  }
  Var<T> operator()(const Var<T>& x) const {
    return conv2d(x, w, b.defined() ? std::optional<Var<T>>(b) : std::nullopt, k, stride, pad);
  }
  void collect(const std::string& p, ParamList<T>& out) const {
    out.push_back({p + ".w", w});
    if (b.defined()) out.push_back({p + ".b", b});
  }
};

template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;
  Mlp() = default;
  Mlp(int in, int hidden, int out, Rng& rng) : fc1(in, hidden, rng), fc2(hidden, out, rng) {}
  Var<T> operator()(const Var<T>& x) const { return fc2(gelu(fc1(x))); }
  void collect(const std::string& p, ParamList<T>& out) const {
    fc1.collect(p + ".fc1", out);
    fc2.collect(p + ".fc2", out);
  }
};

template <typename T>
long count_parameters(const ParamList<T>& ps) {
  long n = 0;
  for (const auto& [name, v] : ps) n += v.value().numel();
  return n;
}

template <typename T>
void zero_grads(const ParamList<T>& ps) {
  for (auto [name, v] : ps) v.zero_grad();
}

}  // namespace lmt
