#pragma once

#include <optional>
#include <vector>

#include "lithomt/tensor/autograd.hpp"

namespace lmt {

// Elementwise (equal shapes).
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> gelu(const Var<T>& x);  // tanh approximation
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> inverse_sigmoid(const Var<T>& x, T eps = T(1e-5));

// Weighted sum of scalar losses.
template <typename T> Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights);

// x [..., C] + b [C]
template <typename T> Var<T> add_bias(const Var<T>& x, const Var<T>& b);
// x [..., K] * W [K, N] (+ b [N])
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w);
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);
// Normalization over the last axis with gain and shift [C].
template <typename T> Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& shift, T eps = T(1e-5));

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);

template <typename T> Var<T> reshape(const Var<T>& x, Shape s);

// Row gather on the [rows, C] view of x: the output data is the sequence of
// input rows index[0], index[1], ... (index -1 yields a zero row), read in
// `out_shape`, which must hold index.size() * C values. Backward scatter-adds.
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<int> index, Shape out_shape);

template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_cols(const Var<T>& x, int start, int len);

// NHWC convolution. w is [k*k*Cin, Cout] ordered (ky, kx, ci); zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& b, int k, int stride, int pad);

// NHWC average pool with a square window of `f` and stride `f`.
template <typename T> Var<T> avg_pool(const Var<T>& x, int f);

// Multi-head attention over G independent groups.
// q [G, Nq, C], k and v [G, Nk, C]. bias [heads, Nq, Nk] is learned, mask
// [M, Nq, Nk] is a constant added to group g's logits as mask[g % M].
// When `probs` is given it receives the softmax weights [G, heads, Nq, Nk].
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads,
                 const std::optional<Var<T>>& bias = std::nullopt, const Tensor<T>* mask = nullptr,
                 Tensor<T>* probs = nullptr);

// Hard threshold with identity (straight-through) gradient.
template <typename T> Var<T> binarize_ste(const Var<T>& x, T threshold = T(0.5));

// Sinusoidal features of every column of x [R, D] -> [R, D * feats].
// For each input value: sin(x * 2pi / t_i) for even i, cos for odd i, t_i = temperature^(2*(i/2)/feats).
template <typename T> Var<T> sine_embed(const Var<T>& x, int feats, T temperature = T(10000));

// Scalar node whose value and input gradients were computed externally.
template <typename T>
Var<T> custom_loss(T value, const std::vector<Var<T>>& inputs, std::vector<Tensor<T>> grads);

// Blocks gradient flow.
template <typename T> Var<T> detach(const Var<T>& x);

}  // namespace lmt
