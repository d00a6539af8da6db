#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ctcloud {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;

/// Backward rule of a recorded operation. Reads `out.grad` and accumulates
/// into the grads of `out.inputs` that require grad.
using BackwardFn = std::function<void(Node& out)>;

/// One vertex of the define-by-run graph. Leaves have no backward rule.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::string op;  // "leaf" for user-created tensors
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  bool is_leaf() const { return !backward; }
  /// Grad buffer of input `i`, allocated on demand; empty span when that
  /// input does not take part in differentiation.
  std::span<double> input_grad(std::size_t i);
};

/// Dense row-major tensor of doubles; a cheap shared handle to a graph node.
///
/// Copies alias the same storage, so parameters can be held by several
/// layers and updated in place by the optimizer.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  /// Creates the result of an operation. The graph edge is recorded only if
  /// some input requires grad and gradient recording is enabled.
  static Tensor from_op(std::string op, Shape shape, std::vector<double> data,
                        const std::vector<Tensor>& inputs, BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  /// Allocates (if needed) and zero-fills the grad buffer.
  void zero_grad();

  /// Fresh leaf holding a copy of the data, detached from any graph.
  Tensor detach() const;
  const std::string& op() const;
  bool is_leaf() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// Topologically ordered record of the operations reachable from a root.
class Tape {
 public:
  /// Collects every requires-grad node reachable from `root`, inputs first.
  static Tape record(const Tensor& root);

  const std::vector<Node*>& order() const { return order_; }
  /// Seeds d(root)/d(root) = 1 and runs every backward rule once, in
  /// reverse order. Leaf grads accumulate across calls.
  void backward();

 private:
  std::shared_ptr<Node> root_;
  std::vector<Node*> order_;
};

/// Reverse-mode differentiation of a scalar loss.
void backward(const Tensor& loss);

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

}  // namespace ctcloud
