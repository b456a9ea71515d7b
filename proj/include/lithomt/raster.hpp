#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <ostream>

namespace lmt {

// Row-major pixel grids: row index is y, column index is x.
using Bits = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Grid = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using IntensityRaster = Grid<double>;

// Binary layout, mask or contour. Pixels hold 0 or 1.
struct BinaryRaster {
  Bits pixels;
  double pitch_nm = 1.0;

  BinaryRaster() = default;
  BinaryRaster(Eigen::Index size, double pitch) : pixels(Bits::Zero(size, size)), pitch_nm(pitch) {}
  explicit BinaryRaster(Bits px, double pitch = 1.0) : pixels(std::move(px)), pitch_nm(pitch) {}

  Eigen::Index rows() const { return pixels.rows(); }
  Eigen::Index cols() const { return pixels.cols(); }
  Eigen::Index count() const { return pixels.template cast<Eigen::Index>().sum(); }
  bool empty() const { return count() == 0; }
  bool same_shape(const BinaryRaster& o) const { return rows() == o.rows() && cols() == o.cols(); }

  friend bool operator==(const BinaryRaster& a, const BinaryRaster& b) {
    return a.same_shape(b) && (a.pixels == b.pixels).all();
  }
};

// Axis-aligned pixel box with half-open extent: pixels x_min..x_max-1.
struct PixelBox {
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  int width() const { return x_max - x_min; }
  int height() const { return y_max - y_min; }
  long area() const { return static_cast<long>(width()) * height(); }
  bool valid() const { return x_min < x_max && y_min < y_max; }
  bool overlaps(const PixelBox& o) const {
    return x_min < o.x_max && o.x_min < x_max && y_min < o.y_max && o.y_min < y_max;
  }
  PixelBox merged(const PixelBox& o) const {
    return {std::min(x_min, o.x_min), std::min(y_min, o.y_min), std::max(x_max, o.x_max),
            std::max(y_max, o.y_max)};
  }
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
  friend std::ostream& operator<<(std::ostream& os, const PixelBox& b) {
    return os << "[" << b.x_min << "," << b.y_min << "," << b.x_max << "," << b.y_max << ")";
  }
};

inline double box_iou(const PixelBox& a, const PixelBox& b) {
  const double ix = std::max(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double uni = static_cast<double>(a.area()) + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

template <typename Scalar>
BinaryRaster threshold(const Grid<Scalar>& g, Scalar thr, double pitch = 1.0) {
  return BinaryRaster((g >= thr).template cast<std::uint8_t>(), pitch);
}

template <typename Scalar>
Grid<Scalar> to_real(const BinaryRaster& r) {
  return r.pixels.template cast<Scalar>();
}

}  // namespace lmt
