#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "eatformer/rng.hpp"

namespace eatformer {

using Shape = std::vector<std::int64_t>;

namespace detail {

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << "]";
  return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) { throw std::invalid_argument(msg); }

inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

inline std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline Shape strides_of(const Shape& s) {
  Shape st(s.size());
  std::int64_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

/// Worker count for the few parallel kernels. EATF_THREADS, when set, is
/// authoritative; the default is the hardware thread count. Results do not
/// depend on the worker count.
inline int num_threads() {
  static const int n = [] {
    if (const char* env = std::getenv("EATF_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    return hw > 0 ? hw : 1;
  }();
  return n;
}

inline std::atomic<std::uint64_t>& node_serial() {
  static std::atomic<std::uint64_t> counter{1};
  return counter;
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // pushes this->grad into parents

  bool is_leaf() const { return parents.empty(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major array of doubles, with optional participation in the
/// reverse-mode gradient tape. Copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  static Tensor ones(Shape shape) { return filled(std::move(shape), 1.0); }

  static Tensor filled(Shape shape, double v) {
    validate_shape(shape);
    auto n = make_node(std::move(shape));
    std::fill(n->value.begin(), n->value.end(), v);
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<double> data) {
    validate_shape(shape);
    detail::check(detail::numel_of(shape) == static_cast<std::int64_t>(data.size()),
                  "data length " + std::to_string(data.size()) + " does not match shape " +
                      detail::shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->id = detail::node_serial().fetch_add(1);
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
    auto t = zeros(std::move(shape));
    for (auto& v : t.node()->value) v = rng.normal(mean, stddev);
    return t;
  }

  static Tensor rand_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    auto t = zeros(std::move(shape));
    for (auto& v : t.node()->value) v = rng.uniform(lo, hi);
    return t;
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(n_->value.size()); }
  std::int64_t dim(std::size_t i) const { return n_->shape[i]; }
  std::size_t rank() const { return n_->shape.size(); }

  double* data() { return n_->value.data(); }
  const double* data() const { return n_->value.data(); }
  std::vector<double>& values() { return n_->value; }
  const std::vector<double>& values() const { return n_->value; }

  double item() const {
    detail::check(numel() == 1, "item() requires a single-element tensor, got shape " +
                                    detail::shape_str(shape()));
    return n_->value[0];
  }

  bool requires_grad() const { return n_->requires_grad; }

  Tensor& set_requires_grad(bool v = true) {
    detail::check(n_->is_leaf(), "requires_grad can only be toggled on leaf tensors");
    n_->requires_grad = v;
    return *this;
  }

  bool is_leaf() const { return n_->is_leaf(); }

  /// Gradient accumulated by backward(); empty before the first call.
  const std::vector<double>& grad() const {
    static const std::vector<double> empty;
    return n_->grad.empty() ? empty : n_->grad;
  }

  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
  }

  /// A detached leaf copy of the current values (no history).
  Tensor detach() const { return from(shape(), values()); }

  /// Reverse-mode sweep from a scalar loss. Visits each reachable node once,
  /// in reverse creation order, which is a valid topological order. Leaf
  /// gradients accumulate across calls; interior gradients are rebuilt.
  void backward() {
    detail::check(numel() == 1, "backward() requires a scalar loss, got shape " +
                                    detail::shape_str(shape()));
    detail::check(n_->requires_grad, "backward() on a tensor with no gradient history");
    std::vector<std::shared_ptr<detail::Node>> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::shared_ptr<detail::Node>> stack{n_};
    seen.insert(n_.get());
    while (!stack.empty()) {
      auto cur = stack.back();
      stack.pop_back();
      order.push_back(cur);
      for (auto& p : cur->parents) {
        if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
      }
    }
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a->id > b->id; });
    for (auto& node : order) {
      if (!node->is_leaf()) {
        node->grad.assign(node->value.size(), 0.0);
      } else {
        node->ensure_grad();
      }
    }
    n_->grad.assign(1, 1.0);
    for (auto& node : order) {
      if (node->backprop) node->backprop(*node);
    }
  }

  std::shared_ptr<detail::Node>& node() { return n_; }
  const std::shared_ptr<detail::Node>& node() const { return n_; }

  explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

 private:
  static void validate_shape(const Shape& s) {
    detail::check(!s.empty(), "shape must have rank >= 1");
    for (auto d : s)
      detail::check(d >= 1, "shape extents must be >= 1, got " + detail::shape_str(s));
  }

  static std::shared_ptr<detail::Node> make_node(Shape shape) {
    auto n = std::make_shared<detail::Node>();
    n->value.assign(static_cast<std::size_t>(detail::numel_of(shape)), 0.0);
    n->shape = std::move(shape);
    n->id = detail::node_serial().fetch_add(1);
    return n;
  }

  std::shared_ptr<detail::Node> n_;
};

namespace detail {

/// Builds an interior node. The backprop callback may be empty when no input
/// requires a gradient, in which case the node does not join the tape.
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                      std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->id = node_serial().fetch_add(1);
  bool needs = false;
  for (auto& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    n->requires_grad = true;
    for (auto& t : inputs) n->parents.push_back(t.node());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

inline void accumulate_grad(Node& target, const std::vector<double>& g) {
  target.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) target.grad[i] += g[i];
}

}  // namespace detail

}  // namespace eatformer
