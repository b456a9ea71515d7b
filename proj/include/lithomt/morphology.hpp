#pragma once

#include <vector>

#include "lithomt/raster.hpp"

namespace lmt::morph {

// Value assumed for pixels outside the raster.
enum class Pad { zero, one };

// Centered k x k square (k odd). Erosion keeps pixels whose full window is set.
Bits erode(const Bits& x, int k, Pad pad = Pad::zero);
Bits dilate(const Bits& x, int k);

// Union of all k x k squares that fit inside the set (any k >= 1).
Bits open(const Bits& x, int k, Pad pad = Pad::zero);
Bits close(const Bits& x, int k);

// Inner boundary: g AND NOT erode(g, 3) with zero padding.
Bits edge_regions(const Bits& g);

struct Components {
  Grid<int> labels;  // -1 for background, else component id
  std::vector<PixelBox> boxes;
  std::vector<long> sizes;
  int count() const { return static_cast<int>(boxes.size()); }
};

// 4-connected labelling in raster scan order.
Components label_components(const Bits& x);

// Euclidean distance from every pixel to the nearest set pixel of `features`.
// Infinity everywhere when `features` is empty.
Grid<double> distance_transform(const Bits& features);

}  // namespace lmt::morph
