#include "ctcloud/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "ctcloud/errors.hpp"

namespace ctcloud {

namespace {
thread_local bool g_recording = true;
}  // namespace

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

std::span<double> Node::input_grad(std::size_t i) {
  Node& in = *inputs[i];
  if (!in.requires_grad) return {};
  if (in.grad.size() != in.data.size()) in.grad.assign(in.data.size(), 0.0);
  return in.grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
  node_->op = "leaf";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::from_op(std::string op, Shape shape, std::vector<double> data,
                       const std::vector<Tensor>& inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  out.node_->op = std::move(op);
  if (!g_recording) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) out.node_->inputs.push_back(t.node_);
  out.node_->backward = std::move(backward);
  return out;
}

const Shape& Tensor::shape() const {
  if (!node_) throw UsageError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!node_) throw UsageError("use of undefined tensor");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw UsageError("use of undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!node_) throw UsageError("use of undefined tensor");
  if (!node_->is_leaf()) throw UsageError("requires_grad can only be changed on leaves");
  node_->requires_grad = value;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!has_grad()) zero_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_) throw UsageError("use of undefined tensor");
  node_->grad.assign(node_->data.size(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->data, false); }

const std::string& Tensor::op() const {
  if (!node_) throw UsageError("use of undefined tensor");
  return node_->op;
}

bool Tensor::is_leaf() const { return node_ && node_->is_leaf(); }

Tape Tape::record(const Tensor& root) {
  Tape tape;
  tape.root_ = root.node_ptr();
  if (!tape.root_ || !tape.root_->requires_grad) return tape;

  // Iterative post-order DFS: a node is emitted after all of its inputs.
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(tape.root_.get(), 0);
  visited.insert(tape.root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    tape.order_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

void Tape::backward() {
  if (order_.empty()) return;
  for (Node* n : order_) {
    if (!n->is_leaf()) {
      n->grad.assign(n->data.size(), 0.0);
    } else if (n->grad.size() != n->data.size()) {
      n->grad.assign(n->data.size(), 0.0);
    }
  }
  root_->grad[0] += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf()) n->backward(*n);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward() on undefined tensor");
  if (loss.numel() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw UsageError("backward() on a tensor that is not part of a gradient graph");
  }
  Tape::record(loss).backward();
}

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

bool grad_recording_enabled() { return g_recording; }

}  // namespace ctcloud
