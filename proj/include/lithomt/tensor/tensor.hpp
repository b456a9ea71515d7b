#pragma once

#include <Eigen/Core>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

namespace lmt {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

// Dense row-major tensor. The last axis is the channel axis: a tensor of
// shape [..., C] is viewed as a (numel / C) x C matrix by mat().
template <typename T>
struct Tensor {
  using Vec = Eigen::Array<T, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;

  Shape shape;
  Vec data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(Vec::Constant(count(shape), fill)) {}
  Tensor(Shape s, Vec d) : shape(std::move(s)), data(std::move(d)) {}

  static Eigen::Index count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), Eigen::Index(1), [](Eigen::Index a, int b) { return a * b; });
  }
  static Tensor zeros(Shape s) { return Tensor(std::move(s), T(0)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }
  static Tensor from_matrix(const Mat& m) {
    Tensor t(Shape{static_cast<int>(m.rows()), static_cast<int>(m.cols())});
    t.mat() = m;
    return t;
  }

  Eigen::Index numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[i < 0 ? shape.size() + i : i]; }
  int cols() const { return shape.empty() ? 1 : shape.back(); }
  Eigen::Index rows() const { return cols() ? numel() / cols() : 0; }
  bool empty() const { return data.size() == 0; }

  MatMap mat() { return MatMap(data.data(), rows(), cols()); }
  ConstMatMap mat() const { return ConstMatMap(data.data(), rows(), cols()); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T item() const { return data(0); }

  Tensor reshaped(Shape s) const {
    Tensor t(std::move(s), data);
    return t;
  }
  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, data.template cast<U>());
  }
};

// Throws InputError unless `t` has exactly the given shape.
void require_shape(const Shape& actual, const Shape& expected, const char* what);

}  // namespace lmt
