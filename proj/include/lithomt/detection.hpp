#pragma once

#include <algorithm>
#include <ostream>

#include "lithomt/corpus/rules.hpp"

namespace lmt {

// Real-valued corner box in pixel (or any common) coordinates.
struct BoxCorners {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
};

// (cx, cy, w, h) normalized by the raster size.
struct NormBox {
  double cx = 0, cy = 0, w = 0, h = 0;
  friend bool operator==(const NormBox&, const NormBox&) = default;
};

inline BoxCorners to_corners(const NormBox& b, double width = 1.0, double height = 1.0) {
  return {(b.cx - b.w / 2) * width, (b.cy - b.h / 2) * height, (b.cx + b.w / 2) * width, (b.cy + b.h / 2) * height};
}

inline BoxCorners to_corners(const PixelBox& b) { return {double(b.x_min), double(b.y_min), double(b.x_max), double(b.y_max)}; }

inline NormBox normalize(const PixelBox& b, int width, int height) {
  return {(b.x_min + b.x_max) / (2.0 * width), (b.y_min + b.y_max) / (2.0 * height), double(b.width()) / width,
          double(b.height()) / height};
}

inline double iou(const BoxCorners& a, const BoxCorners& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// One query's prediction.
struct Detection {
  Task task = Task::drc;
  HotspotClass klass = HotspotClass::width;
  NormBox box;
  double confidence = 0.0;
};

}  // namespace lmt
