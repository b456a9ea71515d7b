#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "lithomt/raster.hpp"

namespace lmt::io {

// 8-bit grayscale image, row-major.
using Gray = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Rgb {
  int width = 0, height = 0;
  std::vector<std::uint8_t> data;  // width * height * 3

  Rgb() = default;
  Rgb(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, 0) {}
  void set(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    auto* p = &data[(static_cast<size_t>(y) * width + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
};

void write_gray_png(const std::filesystem::path& path, const Gray& img);
Gray read_gray_png(const std::filesystem::path& path);
void write_rgb_png(const std::filesystem::path& path, const Rgb& img);

// Binary rasters are stored as 0 / 255 grayscale.
void write_binary_png(const std::filesystem::path& path, const BinaryRaster& r);
BinaryRaster read_binary_png(const std::filesystem::path& path, double pitch_nm = 1.0);

// Probability raster in [0,1] quantized to 8 bits.
template <typename Scalar>
void write_probability_png(const std::filesystem::path& path, const Grid<Scalar>& p) {
  Gray g = (p.max(Scalar(0)).min(Scalar(1)) * Scalar(255) + Scalar(0.5)).template cast<std::uint8_t>();
  write_gray_png(path, g);
}

}  // namespace lmt::io
