// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "modasr/tensor.hpp"

#include <sstream>
#include <unordered_set>
#include <utility>

namespace modasr {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace mac {
namespace {
thread_local std::uint64_t counter = 0;
}
std::uint64_t total() { return counter; }
void add(std::uint64_t n) { counter += n; }
}  // namespace mac

namespace {
thread_local bool grad_mode = true;
}

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }
bool grad_enabled() { return grad_mode; }

namespace {

void check_dims(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) {
  check_dims(shape);
  auto n = std::make_shared<Node<T>>();
  n->data.assign(shape_numel(shape), fill);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  node_ = std::move(n);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  check_dims(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  node_ = std::move(n);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_op(const char* op, Shape shape, std::vector<T> values,
                             const std::vector<Tensor>& inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  auto& n = *out.node_;
  n.op = op;
  if (!grad_mode) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  n.requires_grad = true;
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) n.inputs.push_back(in.node_);
  n.backward = std::move(backward);
  return out;
}

template <typename T>
Node<T>& Tensor<T>::node() const {
  if (!node_) throw Error("use of an undefined tensor");
  return *node_;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(s));
  }
  return s[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on non-scalar tensor of shape " + shape_string(shape()));
  }
  return node().data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  node().requires_grad = value;
  return *this;
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  const auto& n = node();
  if (n.grad.empty()) return std::vector<T>(n.data.size(), T{0});
  return n.grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  node().grad.clear();
}

template <typename T>
void Tensor<T>::backward() {
  auto& root = node();
  if (root.data.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_string(root.shape));
  }
  if (root.consumed) {
    throw Error("backward() called twice on the same graph; run a new forward pass first");
  }
  if (!root.requires_grad) {
    throw Error("backward() on a tensor that does not require grad");
  }

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [cur, next] = stack.back();
    if (next < cur->inputs.size()) {
      Node<T>* child = cur->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(cur);
      stack.pop_back();
    }
  }

  for (auto* n : order) n->grad_buffer();
  root.grad[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
  for (auto* n : order) {
    if (!n->inputs.empty()) {
      n->inputs.clear();
      n->backward = nullptr;
    }
  }
  root.consumed = true;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto n = std::make_shared<Node<T>>();
  n->shape = node().shape;
  n->data = node().data;
  return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out = detach();
  out.node_->requires_grad = node().requires_grad;
  return out;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace modasr
