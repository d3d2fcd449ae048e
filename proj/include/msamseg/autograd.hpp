#pragma once

// Tape-based reverse-mode differentiation over the kernels in kernels.hpp.
//
// A Graph records every operation applied to its variables. backward() walks
// the tape in reverse, accumulating gradients into every node that requires
// one. A graph is single-owner: build it, run backward once, read gradients.

#include <functional>
#include <vector>

#include "msamseg/tensor.hpp"

namespace msamseg {

template <typename T>
class Graph;

// Handle to a node of a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Tensor<T>& grad() const;
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> input(Tensor<T> value, bool requires_grad = false);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  // Empty tensor when the node received no gradient.
  const Tensor<T>& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(output) = seed and back-propagates through the tape.
  void backward(Var<T> output, const Tensor<T>& seed);
  // Scalar outputs only; seeds 1.
  void backward(Var<T> scalar);

  // Internal: used by the operator implementations.
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;
  Var<T> record(Tensor<T> value, bool requires_grad, BackwardFn backward);
  // Gradient buffer of a node, allocated as zeros on first use; null when
  // the node does not require a gradient.
  Tensor<T>* grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(id);
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
  return graph->grad(id);
}

// Differentiable operators. All operands must belong to the same graph.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias);

template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> weight, Var<T> bias);

template <typename T>
Var<T> maxpool2d(Var<T> x);

template <typename T>
Var<T> relu(Var<T> x);

template <typename T>
Var<T> bilinear_resize(Var<T> x, std::size_t out_h, std::size_t out_w);

template <typename T>
Var<T> broadcast_mul(Var<T> features, Var<T> map);

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);

// Scalar (1,1,1,1) mean cross-entropy. target is constant.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const Tensor<T>& target);

}  // namespace msamseg
