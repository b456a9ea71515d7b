#pragma once

#include <string>

#include "lithomt/tensor/grid_index.hpp"
#include "lithomt/tensor/nn.hpp"

namespace lmt {

// Pre-norm global self-attention + MLP over tokens [B, N, C].
template <typename T>
struct AttnBlock {
  LayerNorm<T> n1, n2;
  Linear<T> qkv, proj;
  Mlp<T> mlp;
  int heads = 4;
  AttnBlock() = default;
  AttnBlock(int c, int heads_, int mlp_ratio, Rng& rng)
      : n1(c), n2(c), qkv(c, 3 * c, rng), proj(c, c, rng), mlp(c, c * mlp_ratio, c, rng), heads(heads_) {}
  Var<T> operator()(const Var<T>& x, Tensor<T>* probs = nullptr) const {
    const int c = x.dim(2);
    const Var<T> h = qkv(n1(x));
    const Var<T> a = attention<T>(slice_cols(h, 0, c), slice_cols(h, c, c), slice_cols(h, 2 * c, c), heads,
                               std::optional<Var<T>>(), nullptr, probs);
    const Var<T> y = add(x, proj(a));
    return add(y, mlp(n2(y)));
  }
  void collect(const std::string& p, ParamList<T>& out) const {
    n1.collect(p + ".n1", out);
    qkv.collect(p + ".qkv", out);
    proj.collect(p + ".proj", out);
    n2.collect(p + ".n2", out);
    mlp.collect(p + ".mlp", out);
  }
};

// Windowed self-attention block on an NHWC grid with relative position bias;
// `shift` > 0 uses cyclically shifted windows with the boundary mask.
template <typename T>
struct SwinBlock {
  LayerNorm<T> n1, n2;
  Linear<T> qkv, proj;
  Mlp<T> mlp;
  Var<T> rel_table;  // [(2w-1)^2 * heads, 1]
  int heads = 4, win = 4, shift = 0;
  SwinBlock() = default;
  SwinBlock(int c, int heads_, int win_, int shift_, int mlp_ratio, Rng& rng)
      : n1(c), n2(c), qkv(c, 3 * c, rng), proj(c, c, rng), mlp(c, c * mlp_ratio, c, rng),
        rel_table(param_normal<T>({(2 * win_ - 1) * (2 * win_ - 1) * heads_, 1}, T(0.02), rng)),
        heads(heads_), win(win_), shift(shift_) {}

  Var<T> operator()(const Var<T>& x) const {
    const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const int n = win * win, nw = (h / win) * (w / win);
    const int s = (h > win && w > win) ? shift : 0;
    const Var<T> windows = gather_rows(n1(x), grid::window_partition(b, h, w, win, s), {b * nw, n, c});
    const Var<T> t = qkv(windows);
    std::vector<int> bias_idx(static_cast<size_t>(heads) * n * n);
    for (int hd = 0; hd < heads; ++hd)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const int dy = i / win - j / win + win - 1, dx = i % win - j % win + win - 1;
          bias_idx[(static_cast<size_t>(hd) * n + i) * n + j] = (dy * (2 * win - 1) + dx) * heads + hd;
        }
    const Var<T> bias = gather_rows(rel_table, bias_idx, {heads, n, n});
    Tensor<T> mask;
    if (s > 0) mask = shift_mask(h, w, s);
    const Var<T> a = attention<T>(slice_cols(t, 0, c), slice_cols(t, c, c), slice_cols(t, 2 * c, c), heads,
                               std::optional<Var<T>>(bias), s > 0 ? &mask : nullptr);
    const Var<T> back = gather_rows(proj(a), grid::window_reverse(b, h, w, win, s), {b, h, w, c});
    const Var<T> y = add(x, back);
    return add(y, mlp(n2(y)));
  }

  Tensor<T> shift_mask(int h, int w, int s) const {
    const int n = win * win, nwy = h / win, nwx = w / win;
    const auto region = [&](int p, int size) { return p < size - win ? 0 : (p < size - s ? 1 : 2); };
    Tensor<T> m(Shape{nwy * nwx, n, n});
    for (int wy = 0; wy < nwy; ++wy)
      for (int wx = 0; wx < nwx; ++wx)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const int ri = region(wy * win + i / win, h) * 3 + region(wx * win + i % win, w);
            const int rj = region(wy * win + j / win, h) * 3 + region(wx * win + j % win, w);
            m.data(((static_cast<long>(wy) * nwx + wx) * n + i) * n + j) = ri == rj ? T(0) : T(-100);
          }
    return m;
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    n1.collect(p + ".n1", out);
    qkv.collect(p + ".qkv", out);
    out.push_back({p + ".rel_bias", rel_table});
    proj.collect(p + ".proj", out);
    n2.collect(p + ".n2", out);
    mlp.collect(p + ".mlp", out);
  }
};

// x + conv(gelu(conv(norm(x)))) on NHWC grids.
template <typename T>
struct ResBlock {
  LayerNorm<T> norm;
  Conv<T> c1, c2;
  ResBlock() = default;
  ResBlock(int c, Rng& rng) : norm(c), c1(c, c, 3, 1, 1, rng), c2(c, c, 3, 1, 1, rng) {
    c2.w.mutable_value().data *= T(0.5);
  }
  Var<T> operator()(const Var<T>& x) const { return add(x, c2(gelu(c1(norm(x))))); }
  void collect(const std::string& p, ParamList<T>& out) const {
    norm.collect(p + ".norm", out);
    c1.collect(p + ".c1", out);
    c2.collect(p + ".c2", out);
  }
};

// Stride-2 transposed convolution with a 2x2 kernel: per-pixel linear map to
// 4 * cout channels followed by depth-to-space.
template <typename T>
struct UpConv {
  Linear<T> lin;
  int cout = 0;
  UpConv() = default;
  UpConv(int cin, int cout_, Rng& rng) : lin(cin, 4 * cout_, rng), cout(cout_) {}
  Var<T> operator()(const Var<T>& x) const {
    const int b = x.dim(0), h = x.dim(1), w = x.dim(2);
    return gather_rows(reshape(lin(x), {b * h * w * 4, cout}), grid::depth_to_space(b, h, w), {b, 2 * h, 2 * w, cout});
  }
  void collect(const std::string& p, ParamList<T>& out) const { lin.collect(p + ".lin", out); }
};

}  // namespace lmt
