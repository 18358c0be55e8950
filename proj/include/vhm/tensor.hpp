#pragma once

// Dense row-major tensors with a reverse-mode differentiation tape.
//
// A tensor of shape [d0, ..., dk] is stored as an Eigen row-major matrix of
// (d0 * ... * d{k-1}) rows and dk columns; rank-0 and rank-1 tensors are a
// single row. Every op in ops.hpp builds a fresh node whose backward closure
// pushes gradients into its parents. Graphs are single-use: backward() walks
// the graph once and then releases the interior nodes.

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vhm/errors.hpp"

namespace vhm {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Matrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1},
                         [](Index a, Index b) { return a * b; });
}

// Storage geometry for a shape: leading dims collapse into rows.
inline std::pair<Index, Index> storage_dims(const Shape& shape) {
  if (shape.empty()) return {1, 1};
  const Index cols = shape.back();
  return {shape_numel(shape) / cols, cols};
}

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
struct Node {
  Shape shape;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

template <typename Scalar>
class BasicTensor {
 public:
  using scalar_type = Scalar;
  using Mat = Matrix<Scalar>;
  using NodeT = Node<Scalar>;

  BasicTensor() = default;

  BasicTensor(Shape shape, Mat value, bool requires_grad = false)
      : node_(std::make_shared<NodeT>()) {
    for (Index d : shape) {
      if (d <= 0) {
        throw ShapeError("tensor dimensions must be positive, got " +
                         shape_string(shape));
      }
    }
    const auto [rows, cols] = storage_dims(shape);
    if (value.rows() != rows || value.cols() != cols) {
      throw ShapeError("tensor storage " + std::to_string(value.rows()) + "x" +
                       std::to_string(value.cols()) +
                       " does not hold shape " + shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static BasicTensor from_matrix(Mat value, bool requires_grad = false) {
    Shape shape{value.rows(), value.cols()};
    return BasicTensor(std::move(shape), std::move(value), requires_grad);
  }

  static BasicTensor from_vector(const std::vector<Scalar>& values,
                                 bool requires_grad = false) {
    Mat m(1, static_cast<Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) m(0, Index(i)) = values[i];
    Shape shape{m.cols()};
    return BasicTensor(std::move(shape), std::move(m), requires_grad);
  }

  static BasicTensor scalar(Scalar v, bool requires_grad = false) {
    Mat m(1, 1);
    m(0, 0) = v;
    return BasicTensor(Shape{}, std::move(m), requires_grad);
  }

  static BasicTensor zeros(const Shape& shape, bool requires_grad = false) {
    const auto [rows, cols] = storage_dims(shape);
    return BasicTensor(shape, Mat::Zero(rows, cols), requires_grad);
  }

  // Internal: wraps a computed value and, when recording, links parents.
  static BasicTensor make_op(Shape shape, Mat value,
                             const std::vector<BasicTensor>& inputs,
                             std::function<void(NodeT&)> backward) {
    BasicTensor out(std::move(shape), std::move(value), false);
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (const auto& in : inputs) out.node_->parents.push_back(in.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return Index(node_->shape.size()); }
  Index numel() const { return node_->value.size(); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }

  const Mat& value() const { return node_->value; }
  // Direct write access; intended for parameters and test fixtures.
  Mat& mutable_value() { return node_->value; }

  bool has_grad() const { return node_->grad.size() != 0; }
  // Zero matrix when no gradient has arrived.
  Mat grad() const {
    if (has_grad()) return node_->grad;
    return Mat::Zero(rows(), cols());
  }
  void zero_grad() { node_->grad.resize(0, 0); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Scalar item() const {
    if (numel() != 1) {
      throw ShapeError("item() needs a single-element tensor, got " +
                       shape_string(shape()));
    }
    return node_->value(0, 0);
  }

  Scalar at(Index row, Index col) const { return node_->value(row, col); }

  // Reverse-mode sweep from a scalar loss. Gradients add into every
  // requires_grad ancestor; interior nodes are released afterwards.
  void backward() const {
    if (numel() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " +
                          shape_string(shape()));
    }
    if (!node_->requires_grad) return;

    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        NodeT* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) {
          stack.emplace_back(parent, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    node_->accumulate(Mat::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      NodeT* node = *it;
      if (node->backward && node->grad.size() != 0) node->backward(*node);
    }
    for (NodeT* node : order) {
      if (node->backward) {
        node->backward = nullptr;
        node->parents.clear();
        if (node != node_.get()) node->grad.resize(0, 0);
      }
    }
  }

  NodeT* node() const { return node_.get(); }
  const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<NodeT> node_;
};

using Tensor = BasicTensor<double>;
using MatrixXd = Matrix<double>;

}  // namespace vhm
