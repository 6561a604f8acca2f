#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace qfuse {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient slot.
///
/// Tensor is a cheap handle: copies share storage. Values are treated as
/// immutable once an op has consumed them; only leaves (parameters, inputs
/// under a finite-difference probe) are written through mutable_data().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  bool all_finite() const;

  /// Deep copy with no gradient history and requires_grad cleared.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const detail::ImplPtr& impl() const { return impl_; }

 private:
  detail::ImplPtr impl_;
};

/// One recorded operation on the tape.
struct GraphNode {
  std::string op;
  std::vector<detail::ImplPtr> inputs;
  detail::ImplPtr output;
  std::function<void()> backward;
};

/// Per-thread tape of recorded operations. Recording order is a topological
/// order, so reverse traversal visits each node once after all its consumers.
class Graph {
 public:
  static Graph& current();

  void record(GraphNode node);
  std::size_t size() const { return nodes_.size(); }
  const std::vector<GraphNode>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  // When on, every op output is scanned and the first non-finite value
  // raises ValidityError naming the op.
  bool check_finite() const { return check_finite_; }
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  std::vector<GraphNode> nodes_;
  bool grad_enabled_ = true;
  bool check_finite_ = false;
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(Graph::current().grad_enabled()) { Graph::current().set_grad_enabled(false); }
  ~NoGradGuard() { Graph::current().set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class FiniteCheckGuard {
 public:
  explicit FiniteCheckGuard(bool on = true) : prev_(Graph::current().check_finite()) {
    Graph::current().set_check_finite(on);
  }
  ~FiniteCheckGuard() { Graph::current().set_check_finite(prev_); }
  FiniteCheckGuard(const FiniteCheckGuard&) = delete;
  FiniteCheckGuard& operator=(const FiniteCheckGuard&) = delete;

 private:
  bool prev_;
};

/// Reverse sweep from a scalar root. Leaves with requires_grad accumulate
/// d(root)/d(leaf); the tape is cleared afterwards.
void backward(const Tensor& root);

}  // namespace qfuse
