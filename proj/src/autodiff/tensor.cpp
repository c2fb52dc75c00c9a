// SPDX-License-Identifier: Apache-2.0

#include "mome/autodiff/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace mome::ad {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_to_string(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.size() == 2 ? s[0] : 1;
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() == 2) return s[1];
  if (s.size() == 1) return s[0];
  return 1;
}

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf()) throw std::logic_error("mutable_data() on a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!node_->is_leaf()) throw std::logic_error("set_requires_grad() on a non-leaf tensor");
  node_->requires_grad = value;
}

bool Tensor::is_leaf() const { return node_->is_leaf(); }

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), node_->value, requires_grad); }

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                           detail::BackwardFn backward) {
  Tensor out = from(std::move(shape), std::move(values), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(inputs.size());
  for (auto& in : inputs) out.node_->parents.push_back(in.node_);
  out.node_->backward = std::move(backward);
  return out;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_mode_enabled() { return g_grad_enabled; }

void GradientMap::insert(const void* param_id, Tensor grad) { entries_[param_id] = std::move(grad); }

bool GradientMap::contains(const Tensor& param) const { return entries_.count(param.id()) != 0; }

Tensor GradientMap::at(const Tensor& param) const {
  auto it = entries_.find(param.id());
  if (it == entries_.end()) return Tensor::zeros(param.shape());
  return it->second;
}

GradientMap backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " +
                         (loss.defined() ? shape_to_string(loss.shape()) : std::string("undefined")));
  }
  GradientMap result;
  if (!loss.requires_grad()) return result;

  // Iterative post-order DFS; `order` ends up topologically sorted.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->grad.empty() && node->backward) node->backward(*node);
  }
  for (detail::Node* node : order) {
    if (node->is_leaf()) {
      auto grad = node->grad.empty() ? std::vector<double>(node->value.size(), 0.0) : std::move(node->grad);
      result.insert(node, Tensor::from(node->shape, std::move(grad)));
    }
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
  return result;
}

}  // namespace mome::ad
