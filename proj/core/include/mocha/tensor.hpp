#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mocha::ag {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// One vertex of the computation graph. Parents always carry a smaller id than
// their children, so sorting by id gives a valid topological order.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first touched by backward
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  std::uint64_t id = 0;
  bool requires_grad = false;
  bool is_leaf = true;

  std::vector<double>& ensure_grad();
};

using NodePtr = std::shared_ptr<Node>;

// Shared handle to a graph node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return node_->value; }
  // Direct write access, intended for leaves (optimizer updates, test
  // perturbations). Mutating an interior node invalidates its graph.
  std::span<double> mutable_data() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::vector<double> grad_or_zeros() const;
  void zero_grad();

  double item() const;
  double at(std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const {
    return node_->value[r * cols() + c];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  std::uint64_t id() const { return node_->id; }
  const NodePtr& node() const { return node_; }

  // Fresh constant holding a copy of the values.
  Tensor detach() const;

 private:
  NodePtr node_;
};

// Reverse sweep from a scalar root. Interior gradients are recomputed on every
// call; leaf gradients accumulate until zero_grad().
void backward(const Tensor& root);

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Builds an op result. Parents and the backward closure are only retained when
// recording is enabled and at least one parent requires a gradient.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward_fn);

}  // namespace detail

}  // namespace mocha::ag
