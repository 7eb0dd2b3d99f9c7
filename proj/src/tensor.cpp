#include "transsleep/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace transsleep {

namespace {
thread_local bool no_grad = false;
}

NoGradGuard::NoGradGuard() : previous_(no_grad) { no_grad = true; }
NoGradGuard::~NoGradGuard() { no_grad = previous_; }
bool NoGradGuard::active() { return no_grad; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({1}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward() needs a scalar, got " + shape_str(shape()));
  ComputeGraph graph(*this);
  graph.backward();
}

Tensor Tensor::detach() const { return from_data(shape(), node_->value, false); }

ComputeGraph::ComputeGraph(const Tensor& root) : root_(root.node()) {
  // Iterative post-order DFS restricted to nodes that carry gradients.
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  if (!root_->requires_grad) return;
  stack.emplace_back(root_.get(), 0);
  seen.insert(root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order_.push_back(node);
    stack.pop_back();
  }
}

void ComputeGraph::backward() {
  if (order_.empty()) return;
  root_->ensure_grad()[0] += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node* node = *it;
    ++visited_;
    if (node->is_leaf()) continue;
    if (node->backward && !node->grad.empty()) node->backward(*node);
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

}  // namespace transsleep
