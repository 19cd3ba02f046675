#pragma once

// Dense tensors with reverse-mode differentiation. A tensor is a handle to a
// graph node; operations on tensors that require gradients record their
// inputs and a backward closure on the result node.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

namespace mathlm {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> backward_fn;
  std::string_view op = "leaf";

  bool is_leaf() const { return !backward_fn; }

  /// Grad accumulator, zero-filled on first access.
  std::span<T> grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }
  /// Leading extent of a matrix; a vector is treated as one row.
  std::size_t rows() const;
  /// Trailing extent.
  std::size_t cols() const;

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  /// Same values, no history.
  Tensor detach() const;

  void backward() const;

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Nodes reachable from a root through gradient-carrying edges, in
/// topological order: every node appears after all of its inputs.
template <typename T>
class ComputationTape {
 public:
  static ComputationTape record(const Tensor<T>& root);

  const std::vector<Node<T>*>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node<T>*> nodes_;
};

/// Populates grads of every requires_grad tensor reachable from `loss`.
/// Leaf grads accumulate across calls; intermediate grads are recomputed.
/// Throws NotScalar or DetachedGraph.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace mathlm
