// SPDX-License-Identifier: Apache-2.0
//
// Dense f64 tensors recorded on a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle onto a graph node. Leaves are created by the
// factory functions below; every op in ops.hpp returns a new node that keeps
// its inputs alive until the handle is dropped. The graph is rebuilt on every
// forward pass, and backward() walks it once.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mome::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  // Allocated lazily during backward() and released when it returns.
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  bool is_leaf() const { return parents.empty(); }
  // Returns the grad buffer, allocating a zero buffer on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // 2-D view: a rank-1 tensor of n is a 1×n row, a scalar is 1×1.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // In-place access for optimizer updates and finite differences. Leaves only.
  std::span<double> mutable_data();

  double item() const;
  double at(std::size_t flat) const { return data()[flat]; }
  double at(std::size_t row, std::size_t col) const { return data()[row * cols() + col]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  // Fresh leaf holding a copy of the values.
  Tensor clone(bool requires_grad = false) const;

  const void* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> inputs, detail::BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

class GradientMap {
 public:
  void insert(const void* param_id, Tensor grad);
  bool contains(const Tensor& param) const;
  // Gradient for `param`; an all-zero tensor of the parameter's shape when the
  // parameter was not reached from the loss.
  Tensor at(const Tensor& param) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::unordered_map<const void*, Tensor> entries_;
};

// Reverse pass from a scalar loss. Gradients are accumulated across shared
// subexpressions and returned for every requires_grad leaf on the path.
GradientMap backward(const Tensor& loss);

}  // namespace mome::ad
