#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "clotseg/errors.hpp"
#include "clotseg/rng.hpp"

namespace clotseg {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

/// One recorded operation node. The node IS its output: `data` holds the op
/// result, `parents` the inputs, `backward` the rule that scatters this
/// node's gradient into the parents. Leaves have no parents and no rule.
/// `seq` is a per-thread creation counter, so sorting reachable nodes by seq
/// descending replays the recorded execution order backwards; parents always
/// precede children because they exist before the op runs.
template <typename S>
struct Node {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;  // lazily allocated; same length as data when present
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

  std::span<S> grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    return grad;
  }
};

inline std::uint64_t next_seq() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording for its scope (inference / finite differences).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Value-semantic handle to a graph node. Copies share the node, so a Tensor
/// behaves like an immutable array plus an optional gradient buffer.
/// Scalar type S is double in tests and may be float in training builds.
template <typename S>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<detail::Node<S>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static Tensor filled(Shape shape, S value, bool requires_grad = false) {
    auto node = std::make_shared<detail::Node<S>>();
    node->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad && grad_enabled();
    node->seq = detail::next_seq();
    return Tensor(std::move(node));
  }

  /// Builds a leaf from external values; rejects non-finite entries, which
  /// keeps NaN/Inf out of every downstream op.
  static Tensor from_data(Shape shape, std::vector<S> values, bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
      throw ShapeError("from_data: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
    }
    for (const S v : values) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw ValueError("from_data: non-finite value rejected");
      }
    }
    auto node = std::make_shared<detail::Node<S>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad && grad_enabled();
    node->seq = detail::next_seq();
    return Tensor(std::move(node));
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  /// Gaussian leaf, N(mean, sigma^2) per element.
  static Tensor randn(Shape shape, Rng& rng, S sigma = S(1), S mean = S(0),
                      bool requires_grad = false) {
    std::vector<S> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<S>(rng.normal(mean, sigma));
    return from_data(std::move(shape), std::move(v), requires_grad);
  }

  /// Uniform leaf in [lo, hi).
  static Tensor rand_uniform(Shape shape, Rng& rng, S lo, S hi, bool requires_grad = false) {
    std::vector<S> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<S>(rng.uniform(lo, hi));
    return from_data(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  std::int64_t size() const { return node_->numel(); }
  std::int64_t dim(std::int64_t i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const S> data() const { return node_->data; }
  /// Mutable view; only sound for leaves outside any live graph (parameter
  /// updates, finite-difference probes).
  std::span<S> mutable_data() { return node_->data; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const S> grad() const {
    if (!has_grad()) throw ValueError("grad(): no gradient accumulated");
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->data.size(), S(0)); }

  S item() const {
    if (size() != 1) throw ShapeError("item(): tensor has " + std::to_string(size()) + " elements");
    return node_->data[0];
  }

  S at(std::initializer_list<std::int64_t> idx) const {
    return node_->data[static_cast<std::size_t>(flat_index(idx))];
  }

  std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const {
    if (static_cast<std::int64_t>(idx.size()) != rank()) {
      throw ShapeError("index rank mismatch");
    }
    std::int64_t flat = 0;
    std::size_t k = 0;
    for (auto i : idx) {
      const auto d = node_->shape[k];
      if (i < 0 || i >= d) throw ValueError("index out of bounds");
      flat = flat * d + i;
      ++k;
    }
    return flat;
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

/// Allocates the output node of an op; recording (parents + closure) is
/// attached by wire() only when grad mode is on and an input needs it.
template <typename S>
Tensor<S> alloc(Shape shape, const char* op) {
  auto node = std::make_shared<Node<S>>();
  node->data.resize(static_cast<std::size_t>(shape_numel(shape)));
  node->shape = std::move(shape);
  node->seq = next_seq();
  node->op = op;
  return Tensor<S>(std::move(node));
}

template <typename S>
bool any_requires_grad(std::initializer_list<const Tensor<S>*> inputs) {
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

/// `make_backward` is invoked lazily, only when the op actually joins a
/// recorded graph; it returns the closure run during the reverse pass.
template <typename S, typename F>
void wire(Tensor<S>& out, std::initializer_list<const Tensor<S>*> inputs, F&& make_backward) {
  if (!grad_mode() || !any_requires_grad<S>(inputs)) return;
  auto& node = *out.node();
  node.requires_grad = true;
  node.parents.reserve(inputs.size());
  for (const auto* t : inputs) node.parents.push_back(t->node());
  node.backward = make_backward();
}

}  // namespace detail

/// Reachable subgraph of `root` in recorded execution order (ascending seq).
/// Every node appears exactly once; parents precede children.
template <typename S>
std::vector<std::shared_ptr<detail::Node<S>>> collect_graph(const Tensor<S>& root) {
  using NodePtr = std::shared_ptr<detail::Node<S>>;
  std::vector<NodePtr> out;
  std::unordered_set<const detail::Node<S>*> seen;
  std::vector<NodePtr> stack{root.node()};
  while (!stack.empty()) {
    NodePtr n = std::move(stack.back());
    stack.pop_back();
    if (!n || !seen.insert(n.get()).second) continue;
    for (const auto& p : n->parents) stack.push_back(p);
    out.push_back(std::move(n));
  }
  std::sort(out.begin(), out.end(),
            [](const NodePtr& a, const NodePtr& b) { return a->seq < b->seq; });
  return out;
}

/// Reverse-mode pass. Seeds d(root)/d(root) = `seed` (root must be scalar),
/// then visits the recorded nodes exactly once in reverse execution order,
/// accumulating into each leaf's grad buffer. Leaf gradients are summed, not
/// overwritten, so repeated backward calls accumulate across a batch.
template <typename S>
void backward(const Tensor<S>& root, S seed = S(1)) {
  if (root.size() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) {
    throw ValueError("backward: root does not require grad");
  }
  auto nodes = collect_graph(root);
  root.node()->grad_buffer()[0] += seed;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    auto& n = **it;
    if (n.backward) n.backward();
  }
}

/// Releases a no-longer-needed graph below `root` (drops parent links and
/// closures; leaf tensors held elsewhere survive).
template <typename S>
void detach_graph(const Tensor<S>& root) {
  auto nodes = collect_graph(root);
  for (auto& n : nodes) {
    n->parents.clear();
    n->backward = nullptr;
  }
}

}  // namespace clotseg
