#pragma once

// Dense tensors with reverse-mode differentiation.
//
// A tensor is a shared handle to a node holding row-major data (f32 for the
// network, f64 for reference checks). Operations
// that receive at least one input with requires_grad() record a backward
// closure on their output; backward() on a scalar walks the resulting graph in
// reverse topological order, visiting every node once.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "aapool/errors.hpp"

namespace aapool {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
  }
};

}  // namespace detail

template <typename T>
class BasicTensor {
 public:
  BasicTensor() : node_(std::make_shared<detail::Node<T>>()) {}

  explicit BasicTensor(Shape shape, T fill = T{0}, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    node_->data.assign(numel_of(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (numel_of(shape) != data.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                           std::to_string(numel_of(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
    node_->data = std::move(data);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  static BasicTensor scalar(T v, bool requires_grad = false) {
    return BasicTensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }
  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient buffer; zeros if nothing has been accumulated yet.
  std::span<const T> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  // Copy of the values with no history and no gradient tracking.
  BasicTensor detach() const { return BasicTensor(shape(), node_->data, false); }

  // Same storage viewed with a new shape of equal size (differentiable).
  BasicTensor reshape(Shape new_shape) const;

  bool same_node(const BasicTensor& other) const { return node_ == other.node_; }

  detail::Node<T>& node() const { return *node_; }
  const std::shared_ptr<detail::Node<T>>& node_ptr() const { return node_; }

 private:
  template <typename U>
  friend BasicTensor<U> make_result(Shape, std::vector<U>, std::initializer_list<BasicTensor<U>>,
                                    std::function<void(detail::Node<U>&)>);
  explicit BasicTensor(std::shared_ptr<detail::Node<T>> n) : node_(std::move(n)) {}

  std::shared_ptr<detail::Node<T>> node_;
};

// Builds an op output. The backward closure is attached only when some input
// tracks gradients; otherwise the result is a plain constant.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           std::initializer_list<BasicTensor<T>> inputs,
                           std::function<void(detail::Node<T>&)> backward_fn) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool track = false;
  for (const auto& in : inputs) track = track || in.requires_grad();
  if (track) {
    node->requires_grad = true;
    for (const auto& in : inputs) {
      if (in.requires_grad()) node->parents.push_back(in.node_ptr());
    }
    node->backward_fn = std::move(backward_fn);
  }
  return BasicTensor<T>(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshape(Shape new_shape) const {
  if (numel_of(new_shape) != numel()) {
    throw DimensionError("reshape " + shape_str(shape()) + " -> " + shape_str(new_shape));
  }
  auto src = node_;
  return make_result<T>(std::move(new_shape), node_->data, {*this}, [src](detail::Node<T>& out) {
    src->ensure_grad();
    for (std::size_t i = 0; i < out.grad.size(); ++i) src->grad[i] += out.grad[i];
  });
}

// Ordered record of the differentiable operations reachable from a root,
// in topological order (inputs before outputs).
template <typename T>
class Tape {
 public:
  explicit Tape(const BasicTensor<T>& root) {
    std::unordered_set<const detail::Node<T>*> seen;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    stack.emplace_back(&root.node(), 0);
    seen.insert(&root.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node<T>* parent = node->parents[next++].get();
        if (seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::size_t size() const { return order_.size(); }
  const std::vector<detail::Node<T>*>& order() const { return order_; }

  // Runs every recorded backward closure, outputs first.
  void run_backward() const {
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      detail::Node<T>* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
  }

 private:
  std::vector<detail::Node<T>*> order_;
};

// Accumulates d(loss)/d(t) into every tensor with requires_grad() that the
// scalar loss depends on.
template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss that is not connected to any tracked tensor");
  }
  Tape<T> tape(loss);
  loss.node().ensure_grad();
  loss.node().grad[0] += T{1};
  tape.run_backward();
}

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

}  // namespace aapool
