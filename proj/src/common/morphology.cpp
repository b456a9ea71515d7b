#include "lithomt/morphology.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace lmt::morph {
namespace {

using Integral = Eigen::Array<long, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Integral integral(const Bits& x) {
  Integral s = Integral::Zero(x.rows() + 1, x.cols() + 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      s(r + 1, c + 1) = s(r, c + 1) + s(r + 1, c) - s(r, c) + (x(r, c) ? 1 : 0);
  return s;
}

// Sum of set pixels over rows [r0, r1) x cols [c0, c1), clipped to the raster.
long window_sum(const Integral& s, long r0, long r1, long c0, long c1, long& inside) {
  const long rows = s.rows() - 1, cols = s.cols() - 1;
  r0 = std::clamp(r0, 0L, rows);
  r1 = std::clamp(r1, 0L, rows);
  c0 = std::clamp(c0, 0L, cols);
  c1 = std::clamp(c1, 0L, cols);
  inside = std::max(0L, r1 - r0) * std::max(0L, c1 - c0);
  if (inside == 0) return 0;
  return s(r1, c1) - s(r0, c1) - s(r1, c0) + s(r0, c0);
}

// Marks top-left corners (r, c) of k x k windows that are entirely set.
Bits fitting_corners(const Bits& x, int k, Pad pad) {
  const Integral s = integral(x);
  const long area = static_cast<long>(k) * k;
  // Corners may start up to k-1 pixels outside the raster when padding with ones.
  const long lo = pad == Pad::one ? -(k - 1) : 0;
  const long rows = x.rows(), cols = x.cols();
  Bits fit = Bits::Zero(rows + k - 1, cols + k - 1);  // offset by k-1
  for (long r = lo; r < rows; ++r) {
    for (long c = lo; c < cols; ++c) {
      long inside = 0;
      const long sum = window_sum(s, r, r + k, c, c + k, inside);
      const long outside = area - inside;
      const bool full = pad == Pad::one ? sum + outside == area : (outside == 0 && sum == area);
      if (full && inside > 0) fit(r + k - 1, c + k - 1) = 1;
    }
  }
  return fit;
}

}  // namespace

Bits erode(const Bits& x, int k, Pad pad) {
  const Integral s = integral(x);
  const int h = k / 2;
  const long area = static_cast<long>(k) * k;
  Bits out = Bits::Zero(x.rows(), x.cols());
  for (long r = 0; r < x.rows(); ++r)
    for (long c = 0; c < x.cols(); ++c) {
      if (!x(r, c)) continue;
      long inside = 0;
      const long sum = window_sum(s, r - h, r - h + k, c - h, c - h + k, inside);
      const long outside = area - inside;
      out(r, c) = (pad == Pad::one ? sum + outside == area : sum == area) ? 1 : 0;
    }
  return out;
}

Bits dilate(const Bits& x, int k) {
  const Integral s = integral(x);
  const int h = k / 2;
  Bits out = Bits::Zero(x.rows(), x.cols());
  for (long r = 0; r < x.rows(); ++r)
    for (long c = 0; c < x.cols(); ++c) {
      long inside = 0;
      out(r, c) = window_sum(s, r - h, r - h + k, c - h, c - h + k, inside) > 0 ? 1 : 0;
    }
  return out;
}

Bits open(const Bits& x, int k, Pad pad) {
  if (k <= 1) return x;
  const Bits fit = fitting_corners(x, k, pad);
  const Integral s = integral(fit);
  Bits out = Bits::Zero(x.rows(), x.cols());
  for (long r = 0; r < x.rows(); ++r)
    for (long c = 0; c < x.cols(); ++c) {
      if (!x(r, c)) continue;
      // Corner (r0, c0) covers (r, c) iff r0 in (r-k, r]; stored at +k-1.
      long inside = 0;
      out(r, c) = window_sum(s, r, r + k, c, c + k, inside) > 0 ? 1 : 0;
    }
  return out;
}

Bits close(const Bits& x, int k) {
  const Bits inv = (x == 0).cast<std::uint8_t>();
  return (open(inv, k, Pad::one) == 0).cast<std::uint8_t>();
}

Bits edge_regions(const Bits& g) {
  const Bits er = erode(g, 3, Pad::zero);
  return (g != 0 && er == 0).cast<std::uint8_t>();
}

Components label_components(const Bits& x) {
  Components out;
  out.labels = Grid<int>::Constant(x.rows(), x.cols(), -1);
  std::deque<std::pair<int, int>> queue;
  for (int r = 0; r < x.rows(); ++r) {
    for (int c = 0; c < x.cols(); ++c) {
      if (!x(r, c) || out.labels(r, c) >= 0) continue;
      const int id = out.count();
      PixelBox box{c, r, c + 1, r + 1};
      long size = 0;
      out.labels(r, c) = id;
      queue.emplace_back(r, c);
      while (!queue.empty()) {
        const auto [cr, cc] = queue.front();
        queue.pop_front();
        ++size;
        box = box.merged({cc, cr, cc + 1, cr + 1});
        constexpr int dr[4] = {-1, 1, 0, 0};
        constexpr int dc[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          const int nr = cr + dr[d], nc = cc + dc[d];
          if (nr < 0 || nc < 0 || nr >= x.rows() || nc >= x.cols()) continue;
          if (!x(nr, nc) || out.labels(nr, nc) >= 0) continue;
          out.labels(nr, nc) = id;
          queue.emplace_back(nr, nc);
        }
      }
      out.boxes.push_back(box);
      out.sizes.push_back(size);
    }
  }
  return out;
}

namespace {

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {  // z[0] = -inf stops the loop
      --k;
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), inf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    d[q] = double(q - v[j]) * (q - v[j]) + f[v[j]];
  }
}

}  // namespace

Grid<double> distance_transform(const Bits& features) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const long rows = features.rows(), cols = features.cols();
  Grid<double> sq(rows, cols);
  std::vector<double> f(rows), d(rows);
  for (long c = 0; c < cols; ++c) {
    for (long r = 0; r < rows; ++r) f[r] = features(r, c) ? 0.0 : inf;
    edt_1d(f, d);
    for (long r = 0; r < rows; ++r) sq(r, c) = d[r];
  }
  std::vector<double> g(cols), e(cols);
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) g[c] = sq(r, c);
    edt_1d(g, e);
    for (long c = 0; c < cols; ++c) sq(r, c) = e[c];
  }
  return sq.sqrt();
}

}  // namespace lmt::morph
