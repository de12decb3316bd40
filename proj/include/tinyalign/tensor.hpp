#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tinyalign/error.hpp"

namespace tinyalign {

using Shape = std::vector<long>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (const long d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One node of the recorded computation graph. Values are immutable after
// construction; only the grad buffer (and explicit optimizer updates on
// leaves) mutate. `backprop` pushes this node's grad into its parents.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until needed; value.size() once allocated
  bool requires_grad = false;
  bool consumed = false;  // a backward pass already ran through this node
  std::uint64_t id = 0;   // creation order; reverse order is a topological order
  std::vector<NodePtr> parents;
  std::function<void(TensorNode&)> backprop;
};

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

// Thread-local switch: when off, ops evaluate values without recording the
// graph (generation and labeling run in this mode).
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::vector<double>& grad_buf(TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

}  // namespace detail

// RAII guard disabling graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major f64 tensor with reverse-mode autodiff. Copying a Tensor
// aliases the underlying node (shared ownership), like a smart pointer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<long>(data.size()))
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    node->id = detail::next_node_id();
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const long n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                requires_grad);
  }

  static Tensor full(Shape shape, double v) {
    const long n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return check().shape; }
  int rank() const { return static_cast<int>(check().shape.size()); }
  long dim(int i) const { return check().shape[static_cast<std::size_t>(i)]; }
  long size() const { return static_cast<long>(check().value.size()); }

  const std::vector<double>& data() const { return check().value; }

  double item() const {
    const auto& n = check();
    if (n.value.size() != 1)
      throw DimensionError("item() on tensor of shape " + shape_str(n.shape));
    return n.value[0];
  }

  // Row-major element access; convenience for tests and small code paths.
  double at(long i) const { return check().value[static_cast<std::size_t>(i)]; }
  double at(long r, long c) const {
    const auto& n = check();
    return n.value[static_cast<std::size_t>(r * n.shape[1] + c)];
  }

  bool requires_grad() const { return check().requires_grad; }
  bool has_grad() const { return !check().grad.empty(); }

  const std::vector<double>& grad() const {
    const auto& n = check();
    if (n.grad.empty()) throw ValueError("tensor has no gradient; run backward first");
    return n.grad;
  }

  void zero_grad() {
    auto& n = check();
    std::fill(n.grad.begin(), n.grad.end(), 0.0);
  }

  // Mutation entry point for optimizers, initializers and checkpoint
  // loading. All other code treats values as immutable after construction.
  std::vector<double>& raw_data() { return check().value; }
  std::vector<double>& raw_grad() {
    auto& n = check();
    if (n.grad.empty()) throw ValueError("tensor has no gradient; run backward first");
    return n.grad;
  }

  detail::NodePtr node() const { return node_; }

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

  detail::TensorNode& check() const {
    if (!node_) throw ValueError("use of undefined tensor");
    return *node_;
  }

  friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>,
                        std::function<void(detail::TensorNode&)>);

  detail::NodePtr node_;
};

// Builds an op result node. Parents and the backprop closure are recorded
// only when grad mode is on and at least one parent requires grad.
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                      std::function<void(detail::TensorNode&)> backprop) {
  if (shape_numel(shape) != static_cast<long>(value.size()))
    throw DimensionError("op result length does not match shape " + shape_str(shape));
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->id = detail::next_node_id();
  if (detail::grad_mode()) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node());
      node->backprop = std::move(backprop);
    }
  }
  return Tensor(std::move(node));
}

// Reverse-mode sweep from a scalar loss. Fills grad buffers of every
// reachable tensor that requires grad. Each recorded graph can be walked
// once; a second backward through the same nodes is an error.
inline void backward(const Tensor& loss) {
  const auto root = loss.node();
  if (!root) throw ValueError("backward: undefined tensor");
  if (root->value.size() != 1)
    throw DimensionError("backward: loss must be a scalar, got shape " + shape_str(root->shape));
  if (!root->requires_grad)
    throw ValueError("backward: loss does not depend on any trainable tensor");
  if (root->consumed) throw ValueError("backward: graph already consumed");

  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  std::vector<detail::TensorNode*> stack{root.get()};
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (n->backprop && n->consumed)
      throw ValueError("backward: graph already consumed");
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const detail::TensorNode* a, const detail::TensorNode* b) { return a->id > b->id; });

  detail::grad_buf(*root)[0] += 1.0;
  for (auto* n : order) {
    if (!n->backprop) continue;
    if (!n->grad.empty()) n->backprop(*n);
    n->consumed = true;
  }
  root->consumed = true;
}

}  // namespace tinyalign
