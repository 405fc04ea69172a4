// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace modasr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Multiply-accumulate instrumentation. Matmul and convolution forwards add
// their MAC counts to a thread-local counter; elementwise work is not counted.
namespace mac {

std::uint64_t total();
void add(std::uint64_t n);

class Scope {
 public:
  Scope() : start_(total()) {}
  std::uint64_t count() const { return total() - start_; }

 private:
  std::uint64_t start_;
};

}  // namespace mac

// While a NoGradGuard is alive on this thread, ops do not record graph edges.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool consumed = false;  // set on a loss after backward has run through it
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }

  // Gradient buffer of input i, or nullptr when that input is a constant.
  std::vector<T>* input_grad(std::size_t i) {
    auto& in = inputs[i];
    return in->requires_grad ? &in->grad_buffer() : nullptr;
  }
};

// Dense row-major tensor with reverse-mode autodiff. Copies share storage;
// use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;
  using BackwardFn = std::function<void(Node<T>&)>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor scalar(T value, bool requires_grad = false);

  // Build the result of a primitive. The edge to `inputs` and `backward` are
  // recorded only if grad mode is on and some input requires a gradient.
  static Tensor from_op(const char* op, Shape shape, std::vector<T> values,
                        const std::vector<Tensor>& inputs, BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return node().shape.size(); }
  std::size_t numel() const { return node().data.size(); }

  std::span<const T> data() const { return node().data; }
  std::span<T> mutable_data() { return node().data; }
  T item() const;
  T at(std::size_t flat) const { return node().data.at(flat); }

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool has_grad() const { return !node().grad.empty(); }
  // Zeros when no gradient has been accumulated.
  std::vector<T> grad() const;
  void zero_grad();

  // Reverse pass from a scalar. The graph behind this tensor is released
  // afterwards, so a second call on the same loss throws.
  void backward();

  Tensor detach() const;
  Tensor clone() const;

  const NodePtr& node_ptr() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  Node<T>& node() const;

  NodePtr node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace modasr
