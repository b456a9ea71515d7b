#pragma once

#include <vector>

#include "lithomt/tensor/ops.hpp"

// Row-index recipes for gather_rows on NHWC grids viewed as [B*H*W, C].
namespace lmt::grid {

// Window order with an optional cyclic shift: output [B * nW, win*win, C].
inline std::vector<int> window_partition(int b, int h, int w, int win, int shift) {
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(b) * h * w);
  for (int n = 0; n < b; ++n)
    for (int wy = 0; wy < h / win; ++wy)
      for (int wx = 0; wx < w / win; ++wx)
        for (int y = 0; y < win; ++y)
          for (int x = 0; x < win; ++x) {
            const int sy = (wy * win + y + shift) % h, sx = (wx * win + x + shift) % w;
            idx.push_back((n * h + sy) * w + sx);
          }
  return idx;
}

// Inverse of window_partition.
inline std::vector<int> window_reverse(int b, int h, int w, int win, int shift) {
  const auto fwd = window_partition(b, h, w, win, shift);
  std::vector<int> inv(fwd.size());
  for (size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = static_cast<int>(i);
  return inv;
}

// 2x2 space-to-depth: [B, H, W, C] -> [B, H/2, W/2, 4C].
inline std::vector<int> space_to_depth(int b, int h, int w) {
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(b) * h * w);
  for (int n = 0; n < b; ++n)
    for (int y = 0; y < h / 2; ++y)
      for (int x = 0; x < w / 2; ++x)
        for (int d = 0; d < 4; ++d) idx.push_back((n * h + 2 * y + d / 2) * w + 2 * x + d % 2);
  return idx;
}

// 2x2 depth-to-space: rows of [B, H, W, 4C] viewed as [B*H*W*4, C] -> [B, 2H, 2W, C].
inline std::vector<int> depth_to_space(int b, int h, int w) {
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(b) * h * w * 4);
  for (int n = 0; n < b; ++n)
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x) idx.push_back((((n * h + y / 2) * w + x / 2) * 4) + (y % 2) * 2 + x % 2);
  return idx;
}

// Nearest-neighbour resize [B, H, W, C] -> [B, oh, ow, C].
inline std::vector<int> resize_nearest(int b, int h, int w, int oh, int ow) {
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(b) * oh * ow);
  for (int n = 0; n < b; ++n)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) idx.push_back((n * h + y * h / oh) * w + x * w / ow);
  return idx;
}

// Repeat each of `rows` rows `times` times in place: r0 r0 r0 r1 r1 r1 ...
inline std::vector<int> repeat_each(int rows, int times) {
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(rows) * times);
  for (int r = 0; r < rows; ++r)
    for (int t = 0; t < times; ++t) idx.push_back(r);
  return idx;
}

// Tile a block of `rows` rows `times` times: r0 r1 .. r0 r1 ..
inline std::vector<int> tile(int rows, int times) {
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(rows) * times);
  for (int t = 0; t < times; ++t)
    for (int r = 0; r < rows; ++r) idx.push_back(r);
  return idx;
}

}  // namespace lmt::grid
