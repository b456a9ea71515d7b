#include "lithomt/tensor/ops.hpp"

#include <cmath>
#include <cstring>
#include <memory>

#include "lithomt/error.hpp"

namespace lmt {
namespace {

template <typename T>
bool live(const Node<T>* n) {
  return n->requires_grad;
}

template <typename T>
Node<T>* raw(const Var<T>& v) {
  return v.node();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw InputError(what);
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape(), a.value().data + b.value().data);
  Node<T>*pa = raw(a), *pb = raw(b);
  return make_result<T>(std::move(out), {a, b}, [pa, pb](Node<T>& self) {
    if (live(pa)) pa->ensure_grad().data += self.grad.data;
    if (live(pb)) pb->ensure_grad().data += self.grad.data;
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor<T> out(a.shape(), a.value().data - b.value().data);
  Node<T>*pa = raw(a), *pb = raw(b);
  return make_result<T>(std::move(out), {a, b}, [pa, pb](Node<T>& self) {
    if (live(pa)) pa->ensure_grad().data += self.grad.data;
    if (live(pb)) pb->ensure_grad().data -= self.grad.data;
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor<T> out(a.shape(), a.value().data * b.value().data);
  Node<T>*pa = raw(a), *pb = raw(b);
  return make_result<T>(std::move(out), {a, b}, [pa, pb](Node<T>& self) {
    if (live(pa)) pa->ensure_grad().data += self.grad.data * pb->value.data;
    if (live(pb)) pb->ensure_grad().data += self.grad.data * pa->value.data;
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a.shape(), a.value().data * s);
  Node<T>* pa = raw(a);
  return make_result<T>(std::move(out), {a}, [pa, s](Node<T>& self) { pa->ensure_grad().data += self.grad.data * s; });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  const T c = T(0.7978845608028654);
  const auto& xv = x.value().data;
  auto u = (c * (xv + T(0.044715) * xv.cube())).tanh().eval();
  Tensor<T> out(x.shape(), T(0.5) * xv * (T(1) + u));
  Node<T>* px = raw(x);
  return make_result<T>(std::move(out), {x}, [px, c, u = std::move(u)](Node<T>& self) {
    const auto& xv = px->value.data;
    auto d = T(0.5) * (T(1) + u) + T(0.5) * xv * (T(1) - u.square()) * c * (T(1) + T(3 * 0.044715) * xv.square());
    px->ensure_grad().data += self.grad.data * d;
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x.shape(), x.value().data.max(T(0)));
  Node<T>* px = raw(x);
  return make_result<T>(std::move(out), {x}, [px](Node<T>& self) {
    px->ensure_grad().data += (px->value.data > T(0)).select(self.grad.data, T(0));
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x.shape(), T(1) / (T(1) + (-x.value().data).exp()));
  Node<T>* px = raw(x);
  return make_result<T>(std::move(out), {x}, [px](Node<T>& self) {
    const auto& y = self.value.data;
    px->ensure_grad().data += self.grad.data * y * (T(1) - y);
  });
}

template <typename T>
Var<T> inverse_sigmoid(const Var<T>& x, T eps) {
  auto c = x.value().data.max(eps).min(T(1) - eps).eval();
  Tensor<T> out(x.shape(), (c / (T(1) - c)).log());
  Node<T>* px = raw(x);
  return make_result<T>(std::move(out), {x}, [px, eps, c = std::move(c)](Node<T>& self) {
    const auto& xv = px->value.data;
    auto inside = (xv > eps && xv < T(1) - eps);
    px->ensure_grad().data += inside.select(self.grad.data / (c * (T(1) - c)), T(0));
  });
}

template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  require(terms.size() == weights.size() && !terms.empty(), "weighted_sum: size mismatch");
  T v = 0;
  for (size_t i = 0; i < terms.size(); ++i) {
    require(terms[i].value().numel() == 1, "weighted_sum: terms must be scalars");
    v += weights[i] * terms[i].item();
  }
  std::vector<Node<T>*> ps;
  for (const auto& t : terms) ps.push_back(raw(t));
  return make_result<T>(Tensor<T>::scalar(v), terms, [ps, weights](Node<T>& self) {
    for (size_t i = 0; i < ps.size(); ++i)
      if (live(ps[i])) ps[i]->ensure_grad().data += self.grad.data * weights[i];
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b) {
  require(b.value().numel() == x.value().cols(), "add_bias: width mismatch");
  Tensor<T> out = x.value();
  out.mat().rowwise() += b.value().mat().row(0);
  Node<T>*px = raw(x), *pb = raw(b);
  return make_result<T>(std::move(out), {x, b}, [px, pb](Node<T>& self) {
    if (live(px)) px->ensure_grad().data += self.grad.data;
    if (live(pb)) pb->ensure_grad().mat().row(0) += self.grad.mat().colwise().sum();
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w) {
  require(w.value().rank() == 2 && x.value().cols() == w.dim(0),
          "linear: input width " + std::to_string(x.value().cols()) + " vs weight " + shape_str(w.shape()));
  Shape s = x.shape();
  s.back() = w.dim(1);
  Tensor<T> out(s);
  out.mat().noalias() = x.value().mat() * w.value().mat();
  Node<T>*px = raw(x), *pw = raw(w);
  return make_result<T>(std::move(out), {x, w}, [px, pw](Node<T>& self) {
    if (live(px)) px->ensure_grad().mat().noalias() += self.grad.mat() * pw->value.mat().transpose();
    if (live(pw)) pw->ensure_grad().mat().noalias() += px->value.mat().transpose() * self.grad.mat();
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require(w.value().rank() == 2 && x.value().cols() == w.dim(0), "linear: input width mismatch");
  require(b.value().numel() == w.dim(1), "linear: bias width mismatch");
  Shape s = x.shape();
  s.back() = w.dim(1);
  Tensor<T> out(s);
  out.mat().noalias() = x.value().mat() * w.value().mat();
  out.mat().rowwise() += b.value().mat().row(0);
  Node<T>*px = raw(x), *pw = raw(w), *pb = raw(b);
  return make_result<T>(std::move(out), {x, w, b}, [px, pw, pb](Node<T>& self) {
    if (live(px)) px->ensure_grad().mat().noalias() += self.grad.mat() * pw->value.mat().transpose();
    if (live(pw)) pw->ensure_grad().mat().noalias() += px->value.mat().transpose() * self.grad.mat();
    if (live(pb)) pb->ensure_grad().mat().row(0) += self.grad.mat().colwise().sum();
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& shift, T eps) {
  const int c = x.value().cols();
  require(gain.value().numel() == c && shift.value().numel() == c, "layer_norm: width mismatch");
  using Mat = typename Tensor<T>::Mat;
  using Col = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  const auto xm = x.value().mat();
  Col mu = xm.rowwise().mean();
  Mat xhat = xm.colwise() - mu;
  Col inv = ((xhat.array().square().rowwise().sum() / T(c)) + eps).rsqrt().matrix();
  xhat = inv.asDiagonal() * xhat;
  Tensor<T> out(x.shape());
  out.mat() = (xhat.array().rowwise() * gain.value().mat().row(0).array()).matrix();
  out.mat().rowwise() += shift.value().mat().row(0);
  Node<T>*px = raw(x), *pg = raw(gain), *pb = raw(shift);
  return make_result<T>(std::move(out), {x, gain, shift},
                        [px, pg, pb, c, xhat = std::move(xhat), inv = std::move(inv)](Node<T>& self) {
                          const auto dy = self.grad.mat();
                          if (live(pg)) pg->ensure_grad().mat().row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
                          if (live(pb)) pb->ensure_grad().mat().row(0) += dy.colwise().sum();
                          if (live(px)) {
                            Mat dxh = (dy.array().rowwise() * pg->value.mat().row(0).array()).matrix();
                            Col m1 = dxh.rowwise().mean();
                            Col m2 = (dxh.array() * xhat.array()).rowwise().sum().matrix() / T(c);
                            Mat dx = dxh.colwise() - m1;
                            dx -= m2.asDiagonal() * xhat;
                            px->ensure_grad().mat() += inv.asDiagonal() * dx;
                          }
                        });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  Node<T>* px = raw(x);
  return make_result<T>(Tensor<T>::scalar(x.value().data.sum()), {x},
                        [px](Node<T>& self) { px->ensure_grad().data += self.grad.item(); });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const T n = T(x.value().numel());
  Node<T>* px = raw(x);
  return make_result<T>(Tensor<T>::scalar(x.value().data.sum() / n), {x},
                        [px, n](Node<T>& self) { px->ensure_grad().data += self.grad.item() / n; });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape s) {
  require(Tensor<T>::count(s) == x.value().numel(), "reshape: element count mismatch " + shape_str(x.shape()) + " -> " + shape_str(s));
  Node<T>* px = raw(x);
  return make_result<T>(x.value().reshaped(std::move(s)), {x},
                        [px](Node<T>& self) { px->ensure_grad().data += self.grad.data; });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<int> index, Shape out_shape) {
  const int c = x.value().cols();
  const long rows = x.value().rows();
  require(Tensor<T>::count(out_shape) == static_cast<Eigen::Index>(index.size()) * c,
          "gather_rows: output shape " + shape_str(out_shape) + " does not hold the gathered rows");
  Tensor<T> out(std::move(out_shape));
  const T* src = x.value().ptr();
  T* dst = out.ptr();
  for (size_t i = 0; i < index.size(); ++i) {
    const int r = index[i];
    if (r < 0) continue;
    require(r < rows, "gather_rows: index out of range");
    std::memcpy(dst + i * c, src + static_cast<long>(r) * c, sizeof(T) * c);
  }
  Node<T>* px = raw(x);
  return make_result<T>(std::move(out), {x}, [px, c, index = std::move(index)](Node<T>& self) {
    T* g = px->ensure_grad().ptr();
    const T* up = self.grad.ptr();
    for (size_t i = 0; i < index.size(); ++i) {
      const int r = index[i];
      if (r < 0) continue;
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(g + static_cast<long>(r) * c, c) +=
          Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(up + i * c, c);
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index rows = parts[0].value().rows();
  int total = 0;
  for (const auto& p : parts) {
    require(p.value().rows() == rows, "concat_cols: row count mismatch");
    total += p.value().cols();
  }
  Shape s = parts[0].shape();
  s.back() = total;
  Tensor<T> out(s);
  std::vector<Node<T>*> ps;
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    out.mat().middleCols(off, p.value().cols()) = p.value().mat();
    ps.push_back(raw(p));
    offsets.push_back(off);
    off += p.value().cols();
  }
  return make_result<T>(std::move(out), parts, [ps, offsets](Node<T>& self) {
    for (size_t i = 0; i < ps.size(); ++i)
      if (live(ps[i])) ps[i]->ensure_grad().mat() += self.grad.mat().middleCols(offsets[i], ps[i]->value.cols());
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, int start, int len) {
  require(start >= 0 && len > 0 && start + len <= x.value().cols(), "slice_cols: range out of bounds");
  Shape s = x.shape();
  s.back() = len;
  Tensor<T> out(s);
  out.mat() = x.value().mat().middleCols(start, len);
  Node<T>* px = raw(x);
  return make_result<T>(std::move(out), {x}, [px, start, len](Node<T>& self) {
    px->ensure_grad().mat().middleCols(start, len) += self.grad.mat();
  });
}

namespace {

struct ConvGeom {
  int b, h, w, cin, k, stride, pad, ho, wo;
  long out_rows() const { return static_cast<long>(b) * ho * wo; }
  int patch() const { return k * k * cin; }
};

// Rows [r0, r1) of the patch matrix (row = output pixel, (ky, kx, ci) columns).
template <typename T>
void im2col(const T* x, const ConvGeom& g, long r0, long r1, T* cols) {
  const int patch = g.patch();
  for (long r = r0; r < r1; ++r) {
    const int ox = static_cast<int>(r % g.wo), oy = static_cast<int>((r / g.wo) % g.ho);
    const long bi = r / (static_cast<long>(g.wo) * g.ho);
    T* row = cols + (r - r0) * patch;
    for (int ky = 0; ky < g.k; ++ky) {
      const int iy = oy * g.stride - g.pad + ky;
      for (int kx = 0; kx < g.k; ++kx) {
        const int ix = ox * g.stride - g.pad + kx;
        T* dst = row + (ky * g.k + kx) * g.cin;
        if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w)
          std::memset(dst, 0, sizeof(T) * g.cin);
        else
          std::memcpy(dst, x + ((bi * g.h + iy) * g.w + ix) * g.cin, sizeof(T) * g.cin);
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeom& g, long r0, long r1, T* x) {
  const int patch = g.patch();
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  for (long r = r0; r < r1; ++r) {
    const int ox = static_cast<int>(r % g.wo), oy = static_cast<int>((r / g.wo) % g.ho);
    const long bi = r / (static_cast<long>(g.wo) * g.ho);
    const T* row = cols + (r - r0) * patch;
    for (int ky = 0; ky < g.k; ++ky) {
      const int iy = oy * g.stride - g.pad + ky;
      if (iy < 0 || iy >= g.h) continue;
      for (int kx = 0; kx < g.k; ++kx) {
        const int ix = ox * g.stride - g.pad + kx;
        if (ix < 0 || ix >= g.w) continue;
        Eigen::Map<Arr>(x + ((bi * g.h + iy) * g.w + ix) * g.cin, g.cin) +=
            Eigen::Map<const Arr>(row + (ky * g.k + kx) * g.cin, g.cin);
      }
    }
  }
}

// Output rows per im2col chunk, sized to stay cache resident.
long conv_chunk(const ConvGeom& g) { return std::max<long>(64, (1L << 16) / std::max(1, g.patch())); }

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& b, int k, int stride, int pad) {
  require(x.value().rank() == 4, "conv2d: input must be NHWC, got " + shape_str(x.shape()));
  const ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k, stride, pad,
                   (x.dim(1) + 2 * pad - k) / stride + 1, (x.dim(2) + 2 * pad - k) / stride + 1};
  require(g.ho > 0 && g.wo > 0, "conv2d: kernel larger than padded input");
  require(w.value().rank() == 2 && w.dim(0) == g.patch(),
          "conv2d: weight " + shape_str(w.shape()) + " does not match k*k*Cin = " + std::to_string(g.patch()));
  const int cout = w.dim(1);
  Tensor<T> out(Shape{g.b, g.ho, g.wo, cout});
  const bool pointwise = k == 1 && stride == 1 && pad == 0;
  using Mat = typename Tensor<T>::Mat;
  if (pointwise) {
    out.mat().noalias() = x.value().mat() * w.value().mat();
  } else {
    const long chunk = conv_chunk(g);
    Mat cols(chunk, g.patch());
    for (long r0 = 0; r0 < g.out_rows(); r0 += chunk) {
      const long n = std::min(chunk, g.out_rows() - r0);
      im2col(x.value().ptr(), g, r0, r0 + n, cols.data());
      out.mat().middleRows(r0, n).noalias() = cols.topRows(n) * w.value().mat();
    }
  }
  std::vector<Var<T>> parents{x, w};
  Node<T>* pb = nullptr;
  if (b) {
    require(b->value().numel() == cout, "conv2d: bias width mismatch");
    out.mat().rowwise() += b->value().mat().row(0);
    parents.push_back(*b);
    pb = raw(*b);
  }
  Node<T>*px = raw(x), *pw = raw(w);
  return make_result<T>(std::move(out), parents, [px, pw, pb, g, pointwise](Node<T>& self) {
    const auto dy = self.grad.mat();
    if (pb && live(pb)) pb->ensure_grad().mat().row(0) += dy.colwise().sum();
    if (pointwise) {
      if (live(pw)) pw->ensure_grad().mat().noalias() += px->value.mat().transpose() * dy;
      if (live(px)) px->ensure_grad().mat().noalias() += dy * pw->value.mat().transpose();
      return;
    }
    const long chunk = conv_chunk(g);
    Mat cols(chunk, g.patch());
    const bool dw = live(pw), dx = live(px);
    for (long r0 = 0; r0 < g.out_rows(); r0 += chunk) {
      const long n = std::min(chunk, g.out_rows() - r0);
      if (dw) {
        im2col(px->value.ptr(), g, r0, r0 + n, cols.data());
        pw->ensure_grad().mat().noalias() += cols.topRows(n).transpose() * dy.middleRows(r0, n);
      }
      if (dx) {
        cols.topRows(n).noalias() = dy.middleRows(r0, n) * pw->value.mat().transpose();
        col2im(cols.data(), g, r0, r0 + n, px->ensure_grad().ptr());
      }
    }
  });
}

template <typename T>
Var<T> avg_pool(const Var<T>& x, int f) {
  require(x.value().rank() == 4 && x.dim(1) % f == 0 && x.dim(2) % f == 0, "avg_pool: size not divisible");
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3), ho = h / f, wo = w / f;
  Tensor<T> out(Shape{b, ho, wo, c});
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const T inv = T(1) / T(f * f);
  const T* src = x.value().ptr();
  for (int bi = 0; bi < b; ++bi)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        Eigen::Map<Arr>(out.ptr() + ((static_cast<long>(bi) * ho + y / f) * wo + xx / f) * c, c) +=
            inv * Eigen::Map<const Arr>(src + ((static_cast<long>(bi) * h + y) * w + xx) * c, c);
  Node<T>* px = raw(x);
  return make_result<T>(std::move(out), {x}, [px, b, h, w, c, ho, wo, f, inv](Node<T>& self) {
    T* g = px->ensure_grad().ptr();
    const T* up = self.grad.ptr();
    for (int bi = 0; bi < b; ++bi)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          Eigen::Map<Arr>(g + ((static_cast<long>(bi) * h + y) * w + xx) * c, c) +=
              inv * Eigen::Map<const Arr>(up + ((static_cast<long>(bi) * ho + y / f) * wo + xx / f) * c, c);
  });
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, const std::optional<Var<T>>& bias,
                 const Tensor<T>* mask, Tensor<T>* probs) {
  require(q.value().rank() == 3 && k.value().rank() == 3 && v.value().rank() == 3, "attention: inputs must be [G, N, C]");
  const int groups = q.dim(0), nq = q.dim(1), nk = k.dim(1), c = q.dim(2);
  require(k.dim(0) == groups && v.dim(0) == groups && k.dim(1) == v.dim(1), "attention: group/key count mismatch");
  require(k.dim(2) == c && v.dim(2) == c, "attention: width mismatch");
  require(heads > 0 && c % heads == 0, "attention: heads must divide the width");
  if (bias) require(bias->shape() == Shape({heads, nq, nk}), "attention: bias shape mismatch");
  if (mask) require(mask->rank() == 3 && mask->dim(1) == nq && mask->dim(2) == nk && groups % mask->dim(0) == 0,
                    "attention: mask shape mismatch");
  const int dh = c / heads;
  const T sc = T(1) / std::sqrt(T(dh));
  using Mat = typename Tensor<T>::Mat;
  using ConstMap = Eigen::Map<const Mat>;

  auto p_store = std::make_shared<Tensor<T>>(Shape{groups, heads, nq, nk});
  Tensor<T> out(Shape{groups, nq, c});
  const auto qm = q.value().mat(), km = k.value().mat(), vm = v.value().mat();
  auto om = out.mat();
  const long block = static_cast<long>(nq) * nk;
  for (int g = 0; g < groups; ++g)
    for (int h = 0; h < heads; ++h) {
      Eigen::Map<Mat> p(p_store->ptr() + (static_cast<long>(g) * heads + h) * block, nq, nk);
      p.noalias() = sc * qm.block(static_cast<long>(g) * nq, h * dh, nq, dh) *
                    km.block(static_cast<long>(g) * nk, h * dh, nk, dh).transpose();
      if (bias) p += ConstMap(bias->value().ptr() + h * block, nq, nk);
      if (mask) p += ConstMap(mask->ptr() + (g % mask->dim(0)) * block, nq, nk);
      for (int r = 0; r < nq; ++r) {
        auto row = p.row(r).array();
        row = (row - row.maxCoeff()).exp();
        row /= row.sum();
      }
      om.block(static_cast<long>(g) * nq, h * dh, nq, dh).noalias() = p * vm.block(static_cast<long>(g) * nk, h * dh, nk, dh);
    }
  if (probs) *probs = *p_store;

  std::vector<Var<T>> parents{q, k, v};
  Node<T>* pbias = nullptr;
  if (bias) {
    parents.push_back(*bias);
    pbias = raw(*bias);
  }
  Node<T>*pq = raw(q), *pk = raw(k), *pv = raw(v);
  return make_result<T>(std::move(out), parents, [=](Node<T>& self) {
    const auto dom = self.grad.mat();
    const auto qm = pq->value.mat(), km = pk->value.mat(), vm = pv->value.mat();
    auto* dq = live(pq) ? &pq->ensure_grad() : nullptr;
    auto* dk = live(pk) ? &pk->ensure_grad() : nullptr;
    auto* dv = live(pv) ? &pv->ensure_grad() : nullptr;
    auto* db = pbias && live(pbias) ? &pbias->ensure_grad() : nullptr;
    Mat dp(nq, nk), ds(nq, nk);
    for (int g = 0; g < groups; ++g)
      for (int h = 0; h < heads; ++h) {
        ConstMap p(p_store->ptr() + (static_cast<long>(g) * heads + h) * block, nq, nk);
        const auto dog = dom.block(static_cast<long>(g) * nq, h * dh, nq, dh);
        const auto vg = vm.block(static_cast<long>(g) * nk, h * dh, nk, dh);
        if (dv) dv->mat().block(static_cast<long>(g) * nk, h * dh, nk, dh).noalias() += p.transpose() * dog;
        dp.noalias() = dog * vg.transpose();
        const auto rs = (dp.array() * p.array()).rowwise().sum().eval();
        ds = (p.array() * (dp.array().colwise() - rs)).matrix();
        if (db) Eigen::Map<Mat>(db->ptr() + h * block, nq, nk) += ds;
        if (dq)
          dq->mat().block(static_cast<long>(g) * nq, h * dh, nq, dh).noalias() +=
              sc * ds * km.block(static_cast<long>(g) * nk, h * dh, nk, dh);
        if (dk)
          dk->mat().block(static_cast<long>(g) * nk, h * dh, nk, dh).noalias() +=
              sc * ds.transpose() * qm.block(static_cast<long>(g) * nq, h * dh, nq, dh);
      }
  });
}

template <typename T>
Var<T> binarize_ste(const Var<T>& x, T threshold) {
  Tensor<T> out(x.shape(), (x.value().data >= threshold).select(Tensor<T>::Vec::Ones(x.value().numel()), T(0)));
  Node<T>* px = raw(x);
  return make_result<T>(std::move(out), {x}, [px](Node<T>& self) { px->ensure_grad().data += self.grad.data; });
}

template <typename T>
Var<T> sine_embed(const Var<T>& x, int feats, T temperature) {
  require(feats > 0 && feats % 2 == 0, "sine_embed: feature count must be even");
  const long n = x.value().numel();
  std::vector<T> freq(feats);
  for (int i = 0; i < feats; ++i)
    freq[i] = T(2 * M_PI) / std::pow(temperature, T(2 * (i / 2)) / T(feats));
  Shape s = x.shape();
  s.back() *= feats;
  Tensor<T> out(s);
  const T* src = x.value().ptr();
  for (long j = 0; j < n; ++j)
    for (int i = 0; i < feats; ++i) {
      const T a = src[j] * freq[i];
      out.ptr()[j * feats + i] = (i % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  Node<T>* px = raw(x);
  return make_result<T>(std::move(out), {x}, [px, feats, freq, n](Node<T>& self) {
    T* g = px->ensure_grad().ptr();
    const T* up = self.grad.ptr();
    const T* src = px->value.ptr();
    for (long j = 0; j < n; ++j) {
      T acc = 0;
      for (int i = 0; i < feats; ++i) {
        const T a = src[j] * freq[i];
        acc += up[j * feats + i] * freq[i] * ((i % 2 == 0) ? std::cos(a) : -std::sin(a));
      }
      g[j] += acc;
    }
  });
}

template <typename T>
Var<T> custom_loss(T value, const std::vector<Var<T>>& inputs, std::vector<Tensor<T>> grads) {
  require(inputs.size() == grads.size(), "custom_loss: gradient count mismatch");
  std::vector<Node<T>*> ps;
  for (size_t i = 0; i < inputs.size(); ++i) {
    require(inputs[i].value().numel() == grads[i].numel(), "custom_loss: gradient shape mismatch");
    ps.push_back(raw(inputs[i]));
  }
  return make_result<T>(Tensor<T>::scalar(value), inputs, [ps, grads = std::move(grads)](Node<T>& self) {
    const T up = self.grad.item();
    for (size_t i = 0; i < ps.size(); ++i)
      if (live(ps[i])) ps[i]->ensure_grad().data += up * grads[i].data;
  });
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return Var<T>::constant(x.value());
}

#define LMT_INSTANTIATE(T)                                                                                    \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> scale(const Var<T>&, T);                                                                    \
  template Var<T> gelu(const Var<T>&);                                                                        \
  template Var<T> relu(const Var<T>&);                                                                        \
  template Var<T> sigmoid(const Var<T>&);                                                                     \
  template Var<T> inverse_sigmoid(const Var<T>&, T);                                                          \
  template Var<T> weighted_sum(const std::vector<Var<T>>&, const std::vector<T>&);                            \
  template Var<T> add_bias(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> linear(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                        \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                                 \
  template Var<T> sum(const Var<T>&);                                                                         \
  template Var<T> mean(const Var<T>&);                                                                        \
  template Var<T> reshape(const Var<T>&, Shape);                                                              \
  template Var<T> gather_rows(const Var<T>&, std::vector<int>, Shape);                                        \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                                    \
  template Var<T> slice_cols(const Var<T>&, int, int);                                                        \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&, int, int, int);          \
  template Var<T> avg_pool(const Var<T>&, int);                                                               \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, int, const std::optional<Var<T>>&,   \
                            const Tensor<T>*, Tensor<T>*);                                                    \
  template Var<T> binarize_ste(const Var<T>&, T);                                                             \
  template Var<T> sine_embed(const Var<T>&, int, T);                                                          \
  template Var<T> custom_loss(T, const std::vector<Var<T>>&, std::vector<Tensor<T>>);                         \
  template Var<T> detach(const Var<T>&);

LMT_INSTANTIATE(float)
LMT_INSTANTIATE(double)

}  // namespace lmt
