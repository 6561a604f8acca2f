#include "qfuse/tensor.hpp"

#include <cmath>
#include <sstream>

#include "qfuse/errors.hpp"

namespace qfuse {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

const detail::TensorImpl& require(const detail::ImplPtr& p) {
  if (!p) throw ContractError("use of undefined tensor");
  return *p;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return require(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return require(impl_).data.size(); }

std::span<const double> Tensor::data() const { return require(impl_).data; }

std::span<double> Tensor::mutable_data() {
  require(impl_);
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return require(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  require(impl_);
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return !require(impl_).grad.empty(); }

std::span<const double> Tensor::grad() const { return require(impl_).grad; }

void Tensor::zero_grad() {
  require(impl_);
  impl_->grad.clear();
}

bool Tensor::all_finite() const {
  for (double v : data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::detach() const {
  const auto& src = require(impl_);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = src.shape;
  impl->data = src.data;
  return Tensor(std::move(impl));
}

Graph& Graph::current() {
  thread_local Graph graph;
  return graph;
}

void Graph::record(GraphNode node) { nodes_.push_back(std::move(node)); }

void backward(const Tensor& root) {
  if (!root.defined()) throw ContractError("backward on undefined tensor");
  if (root.numel() != 1) {
    throw ContractError("backward requires a scalar root, got shape " + shape_str(root.shape()));
  }
  auto& graph = Graph::current();
  if (!root.requires_grad()) {
    graph.clear();
    throw ContractError("backward root does not require grad (no recorded graph)");
  }
  root.impl()->ensure_grad()[0] += 1.0;
  const auto& nodes = graph.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not an ancestor of root
    it->backward();
  }
  // Intermediate gradients are released with the tape; leaves keep theirs.
  for (const auto& node : nodes) {
    if (node.output != root.impl()) node.output->grad.clear();
  }
  graph.clear();
}

}  // namespace qfuse
