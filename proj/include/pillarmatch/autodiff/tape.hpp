#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pillarmatch/error.hpp"

namespace pillarmatch::ad {

// Tensors are rank-2 (rows x cols); vectors are 1 x n rows. Leading-axis
// batching is the only broadcast anywhere in the op set.
template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
struct Parameter {
  std::string name;
  Matrix<S> value;
  Matrix<S> grad;

  Parameter() = default;
  Parameter(std::string n, Matrix<S> v) : name(std::move(n)), value(std::move(v)), grad(Matrix<S>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

template <class S>
class Tape;

// Handle to a node on a tape.
template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<S>& value() const { return tape->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  S scalar() const { return value()(0, 0); }
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order, so backward() walks them once in reverse. A tape can be
// backpropagated exactly once; a second call throws.
template <class S>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> constant(Matrix<S> value) { return push(std::move(value), false, {}); }

  // Leaf that receives a gradient but is not bound to a Parameter.
  Var<S> variable(Matrix<S> value) { return push(std::move(value), true, {}); }

  Var<S> param(Parameter<S>& p) {
    Var<S> v = push(p.value, true, {});
    nodes_[v.id].param = &p;
    return v;
  }

  Var<S> push(Matrix<S> value, bool needs_grad, BackwardFn backward) {
    if (!value.allFinite()) fail(ErrorKind::numeric, "non-finite value produced on tape (node " + std::to_string(nodes_.size()) + ")");
    nodes_.push_back(Node{std::move(value), {}, std::move(backward), nullptr, needs_grad});
    return Var<S>{this, nodes_.size() - 1};
  }

  const Matrix<S>& value(Var<S> v) const { return nodes_[v.id].value; }
  bool needs_grad(Var<S> v) const { return nodes_[v.id].needs_grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  const Matrix<S>& value(std::size_t id) const { return nodes_[id].value; }

  // Gradient buffer of a node, zero-initialised on first access.
  Matrix<S>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  const Matrix<S>& grad(Var<S> v) { return grad(v.id); }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() != 0; }

  std::size_t size() const { return nodes_.size(); }
  bool backpropagated() const { return done_; }

  // Smallest distance of any ReLU input to its kink seen on this tape. Finite
  // differences with a step well below this are free of kink crossings.
  S kink_margin() const { return kink_margin_; }
  void note_kink_distance(S d) { kink_margin_ = std::min(kink_margin_, d); }

  // Seeds d(root)/d(root) = 1 for a 1x1 root, propagates, then accumulates
  // leaf gradients into their bound Parameters.
  void backward(Var<S> root) {
    if (done_) fail(ErrorKind::argument, "tape was already backpropagated");
    if (root.tape != this) fail(ErrorKind::argument, "root belongs to another tape");
    const auto& rv = nodes_[root.id].value;
    if (rv.rows() != 1 || rv.cols() != 1) fail(ErrorKind::shape, "backward root must be a scalar");
    done_ = true;
    grad(root.id)(0, 0) = S(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) n.param->grad += n.grad;
    }
  }

 private:
  struct Node {
    Matrix<S> value;
    Matrix<S> grad;
    BackwardFn backward;
    Parameter<S>* param;
    bool needs_grad;
  };
  std::vector<Node> nodes_;
  bool done_ = false;
  S kink_margin_ = std::numeric_limits<S>::infinity();
};

}  // namespace pillarmatch::ad
