#pragma once

// Dense float64 tensors with a dynamically recorded reverse-mode tape.
//
// Every op output keeps shared ownership of its inputs plus a closure that
// pushes its gradient back into them. `backward(loss)` walks that DAG once in
// reverse topological order, then releases the closures so the tape cannot be
// replayed. Leaves that require grad (parameters) keep accumulating into their
// grad buffer until `zero_grad()`. Values of released nodes stay readable and
// behave as constants afterwards.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ris/error.hpp"

namespace ris {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool stale = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;

  bool is_leaf() const { return !backward; }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

inline thread_local bool grad_enabled = true;

// Gradient buffer of the i-th parent, or nullptr when that parent does not
// take part in differentiation.
inline double* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

inline const std::vector<double>& parent_value(const Node& self, std::size_t i) {
  return self.parents[i]->value;
}

}  // namespace detail

// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false,
         const char* origin = "tensor construction")
      : node_(std::make_shared<detail::Node>()) {
    if (numel(shape) != data.size()) {
      throw Error(ErrorCode::ShapeMismatch, "shape " + shape_string(shape) + " holds " +
                                                std::to_string(numel(shape)) + " values, got " +
                                                std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
    check_finite(origin);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const {
    if (size() != 1) throw Error(ErrorCode::NotScalar, "item() on " + shape_string(shape()));
    return node_->value[0];
  }

  // In-place access for leaves only (optimizer updates, finite differences).
  std::span<double> mutable_data() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }
  bool is_leaf() const { return node_->is_leaf(); }
  bool stale() const { return node_->stale; }

  // Deep copy of the value, detached from any tape.
  Tensor clone() const { return Tensor(shape(), node_->value, false); }

  void check_finite(const char* where) const {
    for (double v : node_->value) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::NonFinite, std::string("non-finite value produced by ") + where);
      }
    }
  }

  const detail::NodePtr& node() const { return node_; }

 private:
  detail::NodePtr node_;
};

namespace detail {

// Builds an op output. The tape entry is only recorded when recording is on
// and at least one input participates in differentiation.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                          std::initializer_list<Tensor> inputs, BackwardFn fn) {
  Tensor out(std::move(shape), std::move(value), false, op);
  if (!grad_enabled) return out;
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;
  Node& n = *out.node();
  n.requires_grad = true;
  for (const auto& t : inputs) n.parents.push_back(t.node());
  n.backward = std::move(fn);
  return out;
}

inline Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                          const std::vector<Tensor>& inputs, BackwardFn fn) {
  Tensor out(std::move(shape), std::move(value), false, op);
  if (!grad_enabled) return out;
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;
  Node& n = *out.node();
  n.requires_grad = true;
  for (const auto& t : inputs) n.parents.push_back(t.node());
  n.backward = std::move(fn);
  return out;
}

}  // namespace detail

// Reverse pass from a scalar loss. Populates grad on every reachable leaf that
// requires grad; interior nodes are released and marked stale.
inline void backward(const Tensor& loss) {
  using detail::Node;
  using detail::NodePtr;
  if (loss.size() != 1) throw Error(ErrorCode::NotScalar, "loss has shape " + shape_string(loss.shape()));
  if (loss.stale()) throw Error(ErrorCode::StaleTape, "backward called twice on the same tape");
  const NodePtr& root = loss.node();
  if (!root->requires_grad || root->is_leaf()) {
    if (root->requires_grad) {
      root->ensure_grad();
      root->grad[0] += 1.0;
    }
    return;
  }

  // Iterative post-order DFS. `order` keeps shared ownership: releasing a
  // node's parents must not free nodes that are still queued.
  std::vector<NodePtr> order;
  std::unordered_set<Node*> visited{root.get()};
  std::vector<std::pair<NodePtr, std::size_t>> stack{{root, 0}};
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      NodePtr p = top.first->parents[top.second++];
      if (p->requires_grad && !p->is_leaf() && visited.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (!n.grad.empty()) n.backward(n);
    n.backward = nullptr;
    n.parents.clear();
    n.grad.clear();
    n.grad.shrink_to_fit();
    n.stale = true;
    n.requires_grad = false;
  }
}

}  // namespace ris
