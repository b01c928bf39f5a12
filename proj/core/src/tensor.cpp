#include "mocha/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

#include "mocha/errors.hpp"

namespace mocha::ag {

namespace {

std::atomic<std::uint64_t> next_id{1};
thread_local bool recording = true;

NodePtr new_node(Shape shape, std::vector<double> values) {
  require(shape_size(shape) == values.size(), [&] { return std::string("tensor: data length " + std::to_string(values.size()) +
              " does not match shape " + shape_str(shape)); });
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->id = next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(new_node(std::move(shape), std::move(values)));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  auto n = new_node(std::move(shape), std::move(values));
  n->requires_grad = true;
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
  auto n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::vector(std::vector<double> values) {
  Shape s{values.size()};
  return constant(std::move(s), std::move(values));
}

std::size_t Tensor::rows() const {
  return dim() == 2 ? node_->shape[0] : 1;
}

std::size_t Tensor::cols() const {
  return dim() == 2 ? node_->shape[1] : node_->shape.empty() ? 1 : node_->shape[0];
}

std::vector<double> Tensor::grad_or_zeros() const {
  if (has_grad()) return node_->grad;
  return std::vector<double>(size(), 0.0);
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  require(size() == 1, [&] { return std::string("item(): tensor of shape " + shape_str(shape()) +
                           " is not a scalar"); });
  return node_->value[0];
}

Tensor Tensor::detach() const { return constant(shape(), values()); }

void backward(const Tensor& root) {
  require(root.defined() && root.size() == 1,
          "backward: root must be a scalar tensor");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.node().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });

  for (Node* n : order)
    if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
  root.node()->ensure_grad()[0] += 1.0;

  for (Node* n : order)
    if (!n->is_leaf && n->backward_fn) n->backward_fn(*n);
}

bool grad_enabled() { return recording; }

NoGradGuard::NoGradGuard() : previous_(recording) { recording = false; }
NoGradGuard::~NoGradGuard() { recording = previous_; }

namespace detail {

Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward_fn) {
  auto n = new_node(std::move(shape), std::move(value));
  n->is_leaf = false;
  if (recording) {
    bool any = std::any_of(parents.begin(), parents.end(),
                           [](const NodePtr& p) { return p->requires_grad; });
    if (any) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(n));
}

}  // namespace detail

}  // namespace mocha::ag
