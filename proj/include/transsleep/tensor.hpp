#pragma once
// Reverse-mode automatic differentiation over dense 64-bit tensors.
//
// A Tensor is a cheap handle to a graph node. Operations in ops.hpp create
// new nodes that remember their inputs and a backward closure whenever any
// input requires a gradient; otherwise no graph is recorded.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace transsleep {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }
  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  // Mutating a tensor that already feeds a recorded graph invalidates that
  // graph's gradients; only parameters between steps should be written.
  std::span<double> mutable_data() { return node_->value; }
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Zeros of the right size when no gradient has been accumulated.
  std::vector<double> grad() const;
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  // Seeds d(self)/d(self) = 1 and accumulates into every reachable leaf.
  // Requires a single-element tensor.
  void backward() const;

  // New leaf holding a copy of the values, detached from any graph.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// While alive, newly created results record no graph on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool active();

 private:
  bool previous_;
};

// Reverse topological replay of the graph below a root.
class ComputeGraph {
 public:
  explicit ComputeGraph(const Tensor& root);

  // Inputs precede the nodes that consume them; the root is last.
  const std::vector<detail::Node*>& order() const { return order_; }
  // Runs every backward closure once, from the root down. Interior gradients
  // are released as soon as they have been propagated.
  void backward();
  std::size_t visited() const { return visited_; }

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<detail::Node*> order_;
  std::size_t visited_ = 0;
};

}  // namespace transsleep
