#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "lithomt/tensor/tensor.hpp"

namespace lmt {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor<T>::zeros(value.shape);
    return grad;
  }
  bool has_grad() const { return requires_grad && grad.numel() == value.numel() && value.numel() > 0; }
};

bool grad_enabled();

// Disables graph recording in its scope (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var leaf(Tensor<T> value, bool requires_grad = true);
  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->has_grad(); }
  const Shape& shape() const { return node_->value.shape; }
  int dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  T item() const { return node_->value.item(); }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

  void zero_grad() { node_->grad = Tensor<T>(); }

  // Reverse-mode pass from a scalar.
  void backward() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

// Records an op result. `backward` receives the result node and must add
// into the gradients of the parents that require them.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward);

}  // namespace lmt
