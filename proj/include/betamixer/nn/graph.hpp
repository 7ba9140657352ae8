#pragma once

#include <deque>
#include <functional>
#include <initializer_list>

#include "betamixer/nn/tensor.hpp"

namespace bmx::nn {

template <typename Scalar>
class Graph;

/// Handle to a value recorded on a Graph.
template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  Index id = -1;

  const Tensor<Scalar>& tensor() const;
  const Matrix<Scalar>& value() const { return tensor().data; }
  const Shape& shape() const { return tensor().shape; }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool requires_grad() const;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so walking the
/// tape backwards from the loss visits every node after all of its consumers.
template <typename Scalar>
class Graph {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(Graph&, const Mat& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> constant(Tensor<Scalar> value) { return push(std::move(value), nullptr, nullptr, false, {}); }
  Var<Scalar> constant(Mat value) { return constant(Tensor<Scalar>::from_matrix(std::move(value))); }

  /// Trainable leaf: backward accumulates into p.grad.
  Var<Scalar> param(Parameter<Scalar>& p) { return push({}, &p.value, &p, true, {}); }
  /// Reads a parameter without routing gradients to it.
  Var<Scalar> frozen(const Parameter<Scalar>& p) { return push({}, &p.value, nullptr, false, {}); }
  Var<Scalar> use(Parameter<Scalar>& p, bool trainable) { return trainable ? param(p) : frozen(p); }

  /// Records an op result. The backward function is kept only when some
  /// input needs a gradient.
  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || v.requires_grad();
    return push(std::move(value), nullptr, nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }
  Var<Scalar> record(Tensor<Scalar> value, const std::vector<Var<Scalar>>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || v.requires_grad();
    return push(std::move(value), nullptr, nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<Scalar>& tensor(Index id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.owned;
  }
  bool requires_grad(Index id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Gradient buffer of a node, zero-initialised on first access.
  Mat& grad(Index id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) {
      const auto& t = tensor(id);
      n.grad = Mat::Zero(t.data.rows(), t.data.cols());
    }
    return n.grad;
  }

  /// Adds `delta` into the gradient of `v` when it participates in differentiation.
  template <typename Derived>
  void accumulate(const Var<Scalar>& v, const Eigen::MatrixBase<Derived>& delta) {
    if (v.requires_grad()) grad(v.id) += delta;
  }

  void backward(const Var<Scalar>& loss) {
    if (loss.graph != this) throw Error("backward: loss belongs to another graph");
    if (tensor(loss.id).size() != 1)
      throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(tensor(loss.id).shape));
    if (!requires_grad(loss.id)) return;
    grad(loss.id).setOnes();
    for (Index id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) n.param->grad.data += n.grad;
    }
  }

  Index size() const { return static_cast<Index>(nodes_.size()); }

 private:
  struct Node {
    Tensor<Scalar> owned;
    const Tensor<Scalar>* external = nullptr;
    Parameter<Scalar>* param = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
    Mat grad;
  };

  Var<Scalar> push(Tensor<Scalar> value, const Tensor<Scalar>* external, Parameter<Scalar>* param, bool needs,
                   BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), external, param, needs, std::move(fn), {}});
    return Var<Scalar>{this, static_cast<Index>(nodes_.size()) - 1};
  }

  std::deque<Node> nodes_;
};

template <typename Scalar>
const Tensor<Scalar>& Var<Scalar>::tensor() const {
  return graph->tensor(id);
}

template <typename Scalar>
bool Var<Scalar>::requires_grad() const {
  return graph->requires_grad(id);
}

}  // namespace bmx::nn
