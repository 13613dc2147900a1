#pragma once

// Dense row-major tensors with a reverse-mode gradient tape.
//
// A Tensor is a cheap handle onto a shared Node. Ops executed while gradient
// recording is enabled and at least one input requires grad attach a backward
// closure to their output node. Every node carries a monotonically increasing
// sequence number, so the tape for a loss is the set of reachable nodes sorted
// by execution order; backward replays it in reverse.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fscil/error.hpp"

namespace fscil {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

inline std::atomic<std::uint64_t>& sequence_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

// Disables tape recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  bool detached = false;
  std::uint64_t seq = 0;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(const Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  std::vector<T>& ensure_grad() {
    if (!has_grad) {
      grad.assign(data.size(), T{0});
      has_grad = true;
    }
    return grad;
  }
};

template <typename T>
void check_finite(std::span<const T> values, std::string_view where) {
  for (const T v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by " + std::string(where));
  }
}

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() : node_(make_node({}, std::vector<T>(1, T{0}))) {}

  Tensor(Shape shape, std::vector<T> data) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    }
    check_finite<T>(data, "tensor construction");
    node_ = make_node(std::move(shape), std::move(data));
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }
  static Tensor zeros(Shape shape) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T{0}));
  }
  static Tensor ones(Shape shape) { return full(std::move(shape), T{1}); }
  static Tensor full(Shape shape, T value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }
  template <typename Rng>
  static Tensor randn(Shape shape, Rng& rng, T stddev = T{1}) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng)) * stddev;
    return Tensor(std::move(shape), std::move(data));
  }
  template <typename Rng>
  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng));
    return Tensor(std::move(shape), std::move(data));
  }

  // Wraps an already-built node; used by op implementations.
  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return node_->shape[axis];
  }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Mutable access; only legal on leaves that are not part of a live graph
  // (optimizer updates, parameter initialization).
  std::span<T> mutable_data() {
    if (!node_->is_leaf()) throw ContractError("mutable_data on a non-leaf tensor");
    return node_->data;
  }
  std::vector<T> to_vector() const { return node_->data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T at(std::initializer_list<std::size_t> index) const { return node_->data[offset(index)]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool value) {
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = value;
    return *this;
  }

  bool has_grad() const { return node_->has_grad; }
  std::span<const T> grad() const {
    if (!node_->has_grad) throw ContractError("tensor has no gradient");
    return node_->grad;
  }
  void zero_grad() {
    node_->grad.clear();
    node_->has_grad = false;
  }

  // New leaf sharing no graph history; backward on it is rejected.
  Tensor detach() const {
    Tensor t(shape(), node_->data);
    t.node_->detached = true;
    return t;
  }
  // Independent leaf copy (no detached marker), e.g. for snapshotting parameters.
  Tensor clone() const { return Tensor(shape(), node_->data); }

  const NodePtr& node() const { return node_; }
  std::uint64_t seq() const { return node_->seq; }
  const std::string& op_name() const { return node_->op; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  static NodePtr make_node(Shape shape, std::vector<T> data) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->seq = detail::sequence_counter().fetch_add(1, std::memory_order_relaxed);
    return node;
  }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw ShapeError("index rank mismatch for " + shape_str(shape()));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (const std::size_t i : index) {
      if (i >= node_->shape[axis]) throw ShapeError("index out of range for " + shape_str(shape()));
      off = off * node_->shape[axis] + i;
      ++axis;
    }
    return off;
  }

  NodePtr node_;
};

// Builds an op output. When recording is enabled and any parent requires grad,
// the backward closure and parent links are attached.
template <typename T>
Tensor<T> make_op_result(std::string_view op, Shape shape, std::vector<T> data,
                         std::vector<std::shared_ptr<Node<T>>> parents,
                         std::function<void(const Node<T>&)> backward_fn) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError(std::string(op) + ": result length does not match shape " + shape_str(shape));
  }
  check_finite<T>(data, op);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = std::string(op);
  node->seq = detail::sequence_counter().fetch_add(1, std::memory_order_relaxed);
  const bool needs = grad_enabled() && std::any_of(parents.begin(), parents.end(),
                                                   [](const auto& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

// Ordered record of the operations reachable from a loss, in execution order.
template <typename T>
class GradTape {
 public:
  static GradTape record(const Tensor<T>& root) {
    GradTape tape;
    if (!root.requires_grad()) return tape;
    std::vector<Node<T>*> stack{root.node().get()};
    std::unordered_set<Node<T>*> seen{root.node().get()};
    while (!stack.empty()) {
      Node<T>* n = stack.back();
      stack.pop_back();
      tape.nodes_.push_back(n);
      for (const auto& p : n->parents) {
        if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
      }
    }
    std::sort(tape.nodes_.begin(), tape.nodes_.end(),
              [](const Node<T>* a, const Node<T>* b) { return a->seq < b->seq; });
    return tape;
  }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  const std::vector<Node<T>*>& nodes() const { return nodes_; }

  // Replays backward closures newest-first; returns the visited sequence numbers.
  std::vector<std::uint64_t> replay() const {
    std::vector<std::uint64_t> visited;
    visited.reserve(nodes_.size());
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>* n = *it;
      if (!visited.empty() && n->seq >= visited.back()) throw ContractError("gradient tape is not acyclic");
      visited.push_back(n->seq);
      if (n->backward_fn && n->has_grad) n->backward_fn(*n);
    }
    return visited;
  }

 private:
  std::vector<Node<T>*> nodes_;
};

// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
// A loss with no gradient path is a no-op.
template <typename T>
std::vector<std::uint64_t> backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  if (loss.node()->detached) throw ContractError("backward on a detached tensor");
  if (!loss.requires_grad()) return {};
  auto tape = GradTape<T>::record(loss);
  loss.node()->ensure_grad()[0] += T{1};
  auto visited = tape.replay();
  // Interior gradients are scratch space; only leaves keep theirs.
  for (Node<T>* n : tape.nodes()) {
    if (!n->is_leaf()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
      n->has_grad = false;
    }
  }
  return visited;
}

template <typename T>
void accumulate_grad(Node<T>& target, std::span<const T> delta) {
  if (!target.requires_grad) return;
  auto& g = target.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace fscil
