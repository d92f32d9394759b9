#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tlf/rng.hpp"

namespace tlf {

using Shape = std::vector<int>;

inline int shape_numel(const Shape& s) {
  int n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor extents must be positive");
    n *= d;
  }
  return n;
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One value in the computation graph. Interior nodes carry a backward
// function that scatters the node's gradient into its parents; leaves and
// constants carry none.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily, same extent as value
  bool requires_grad = false;
  bool needs_grad = false;  // true if any ancestor requires a gradient
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
  std::string name;

  int numel() const { return static_cast<int>(value.size()); }

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

// Value handle with shared storage. Copies alias the same node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor leaf(Shape shape, std::vector<double> data, bool requires_grad,
                     std::string name = "") {
    if (shape_numel(shape) != static_cast<int>(data.size()))
      throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    n->name = std::move(name);
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const int n = shape_numel(shape);
    return leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                requires_grad);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    const int n = shape_numel(shape);
    return leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v),
                requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return leaf({1}, {v}, requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    const int n = shape_numel(shape);
    std::vector<double> d(static_cast<std::size_t>(n));
    for (auto& x : d) x = rng.normal(0.0, stddev);
    return leaf(std::move(shape), std::move(d), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const NodePtr& node() const { return node_; }

  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int size() const { return node_->numel(); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }

  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  double item() const {
    if (size() != 1) throw std::invalid_argument("item() requires a one-element tensor");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  std::vector<double>& grad() { return node_->ensure_grad(); }
  const std::vector<double>& grad() const { return node_->ensure_grad(); }
  void zero_grad() {
    auto& g = node_->ensure_grad();
    std::fill(g.begin(), g.end(), 0.0);
  }

  const std::string& name() const { return node_->name; }

 private:
  NodePtr node_;
};

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void check_finite(const Tensor& t, const char* what) {
  if (!all_finite(t.values()))
    throw std::runtime_error(std::string("non-finite values in ") + what);
}

// Records every differentiable operation of one forward pass, in creation
// (hence topological) order.
class Tape {
 public:
  void record(NodePtr n) { nodes_.push_back(std::move(n)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Reverse-mode sweep. Gradients of interior nodes are reset here; leaf
  // gradients accumulate across calls until the caller clears them.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward requires a scalar loss");
    for (auto& n : nodes_) {
      auto& g = n->ensure_grad();
      std::fill(g.begin(), g.end(), 0.0);
    }
    loss.node()->ensure_grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& n = **it;
      if (n.backward_fn) n.backward_fn(n);
    }
  }

 private:
  std::vector<NodePtr> nodes_;
};

namespace detail {
inline Tape*& active_tape_slot() {
  thread_local Tape* t = nullptr;
  return t;
}
}  // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }

// Scoped activation of a tape: operations created while the guard is alive
// are recorded on it.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(detail::active_tape_slot()) {
    detail::active_tape_slot() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Scoped suppression of recording (pure inference inside a training pass).
class NoGradScope {
 public:
  NoGradScope() : prev_(detail::active_tape_slot()) { detail::active_tape_slot() = nullptr; }
  ~NoGradScope() { detail::active_tape_slot() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* prev_;
};

// Builds an operation result node. When a tape is active and some input
// carries gradient, the node is recorded with its backward function;
// otherwise the result is a plain constant.
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                      std::function<void(Node&)> backward) {
  if (shape_numel(shape) != static_cast<int>(value.size()))
    throw std::invalid_argument("operation produced mismatched value size");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  Tape* tape = active_tape();
  bool needs = false;
  for (const auto& in : inputs)
    if (in.defined() && in.node()->needs_grad) needs = true;
  if (tape && needs) {
    n->needs_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.node());
    n->backward_fn = std::move(backward);
    tape->record(n);
  }
  return Tensor(std::move(n));
}

}  // namespace tlf
