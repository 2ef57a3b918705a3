#include "c4v/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace c4v {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) {
    n *= extent;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "x" : "") << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) {
    throw std::invalid_argument("tensor shape must have at least one extent");
  }
  for (auto extent : shape) {
    if (extent == 0) {
      throw std::invalid_argument("tensor extents must be positive: " + shape_string(shape));
    }
  }
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                " does not match shape " + shape_string(shape));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  auto n = values.size();
  return Tensor({1, n}, std::move(values), requires_grad);
}

namespace {

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) {
    throw std::logic_error("use of an undefined tensor");
  }
  return *node;
}

} // namespace

const Shape& Tensor::shape() const {
  return checked(node_).shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape().size()) {
    throw std::out_of_range("axis out of range for shape " + shape_string(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const {
  return checked(node_).value.size();
}

std::size_t Tensor::cols() const {
  return shape().back();
}

std::size_t Tensor::rows() const {
  return numel() / cols();
}

std::span<const double> Tensor::values() const {
  return checked(node_).value;
}

std::span<double> Tensor::mutable_values() {
  checked(node_);
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return node_->value[row * cols() + col];
}

bool Tensor::requires_grad() const {
  return node_->requires_grad;
}

bool Tensor::has_grad() const {
  return node_->grad.size() == node_->value.size();
}

std::span<const double> Tensor::grad() const {
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  node_->grad.clear();
}

Tensor Tensor::detach() const {
  return Tensor(node_->shape, node_->value, false);
}

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
               std::function<void(detail::Node&)> backward_fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  for (const auto& t : inputs) {
    needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) {
      node->inputs.push_back(t.node());
    }
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward() requires a scalar loss");
  }
  auto root = loss.node();
  if (!root->requires_grad) {
    return;
  }

  // Iterative post-order DFS gives a topological order with inputs first.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (node->backward) {
      node->grad.assign(node->value.size(), 0.0);
    }
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) {
      (*it)->backward(**it);
    }
  }
}

} // namespace c4v
