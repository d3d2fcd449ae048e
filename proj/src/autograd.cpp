#include "msamseg/autograd.hpp"

#include <memory>

#include "msamseg/kernels.hpp"

namespace msamseg {

template <typename T>
Var<T> Graph<T>::input(Tensor<T> value, bool requires_grad) {
  return record(std::move(value), requires_grad, nullptr);
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, bool requires_grad, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), Tensor<T>{}, false, requires_grad, std::move(backward)});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>* Graph<T>::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return nullptr;
  if (!node.has_grad) {
    node.grad = Tensor<T>(node.value.shape());
    node.has_grad = true;
  }
  return &node.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> output, const Tensor<T>& seed) {
  if (output.graph != this) throw ShapeError("backward: variable belongs to another graph");
  if (seed.shape() != nodes_[output.id].value.shape()) {
    throw ShapeError("backward: seed " + to_string(seed.shape()) + " vs output " +
                     to_string(nodes_[output.id].value.shape()));
  }
  Tensor<T>* g = grad_buffer(output.id);
  if (!g) return;
  for (std::size_t i = 0; i < seed.size(); ++i) (*g)[i] += seed[i];
  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || !node.has_grad) continue;
    node.backward(*this, id);
  }
}

template <typename T>
void Graph<T>::backward(Var<T> scalar) {
  const auto& s = nodes_[scalar.id].value.shape();
  if (s.numel() != 1) throw ShapeError("backward: output " + to_string(s) + " is not a scalar");
  backward(scalar, Tensor<T>(s, T(1)));
}

namespace {

template <typename T>
Graph<T>& same_graph(std::initializer_list<Var<T>> vars) {
  Graph<T>* g = vars.begin()->graph;
  for (const auto& v : vars) {
    if (v.graph != g || g == nullptr) throw ShapeError("operands belong to different graphs");
  }
  return *g;
}

template <typename T>
bool any_grad(std::initializer_list<Var<T>> vars) {
  for (const auto& v : vars) {
    if (v.graph->requires_grad(v.id)) return true;
  }
  return false;
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias) {
  Graph<T>& g = same_graph({x, weight, bias});
  auto out = kernels::conv2d_forward(x.value(), weight.value(), bias.value());
  return g.record(std::move(out), any_grad({x, weight, bias}), [=](Graph<T>& gr, std::size_t self) {
    kernels::conv2d_backward(gr.value(x.id), gr.value(weight.id), gr.grad(self), gr.grad_buffer(x.id),
                             gr.grad_buffer(weight.id), gr.grad_buffer(bias.id));
  });
}

template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> weight, Var<T> bias) {
  Graph<T>& g = same_graph({x, weight, bias});
  auto out = kernels::conv_transpose2d_forward(x.value(), weight.value(), bias.value());
  return g.record(std::move(out), any_grad({x, weight, bias}), [=](Graph<T>& gr, std::size_t self) {
    kernels::conv_transpose2d_backward(gr.value(x.id), gr.value(weight.id), gr.grad(self), gr.grad_buffer(x.id),
                                       gr.grad_buffer(weight.id), gr.grad_buffer(bias.id));
  });
}

template <typename T>
Var<T> maxpool2d(Var<T> x) {
  Graph<T>& g = same_graph({x});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>();
  auto out = kernels::maxpool2d_forward(x.value(), *argmax);
  return g.record(std::move(out), any_grad({x}), [=](Graph<T>& gr, std::size_t self) {
    if (auto* gx = gr.grad_buffer(x.id)) kernels::maxpool2d_backward(*argmax, gr.grad(self), *gx);
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Graph<T>& g = same_graph({x});
  auto out = kernels::relu_forward(x.value());
  return g.record(std::move(out), any_grad({x}), [=](Graph<T>& gr, std::size_t self) {
    if (auto* gx = gr.grad_buffer(x.id)) kernels::relu_backward(gr.value(x.id), gr.grad(self), *gx);
  });
}

template <typename T>
Var<T> bilinear_resize(Var<T> x, std::size_t out_h, std::size_t out_w) {
  Graph<T>& g = same_graph({x});
  auto out = kernels::bilinear_resize_forward(x.value(), out_h, out_w);
  return g.record(std::move(out), any_grad({x}), [=](Graph<T>& gr, std::size_t self) {
    if (auto* gx = gr.grad_buffer(x.id)) kernels::bilinear_resize_backward(gr.grad(self), *gx);
  });
}

template <typename T>
Var<T> broadcast_mul(Var<T> features, Var<T> map) {
  Graph<T>& g = same_graph({features, map});
  auto out = kernels::broadcast_mul_forward(features.value(), map.value());
  return g.record(std::move(out), any_grad({features, map}), [=](Graph<T>& gr, std::size_t self) {
    kernels::broadcast_mul_backward(gr.value(features.id), gr.value(map.id), gr.grad(self),
                                    gr.grad_buffer(features.id), gr.grad_buffer(map.id));
  });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  Graph<T>& g = same_graph({a, b});
  auto out = kernels::concat_channels_forward(a.value(), b.value());
  return g.record(std::move(out), any_grad({a, b}), [=](Graph<T>& gr, std::size_t self) {
    kernels::concat_channels_backward(gr.grad(self), gr.grad_buffer(a.id), gr.grad_buffer(b.id));
  });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const Tensor<T>& target) {
  Graph<T>& g = same_graph({logits});
  auto probs = std::make_shared<Tensor<T>>();
  const T loss = kernels::softmax_cross_entropy_forward(logits.value(), target, *probs);
  auto tgt = std::make_shared<const Tensor<T>>(target);
  return g.record(Tensor<T>(Shape{1, 1, 1, 1}, loss), any_grad({logits}), [=](Graph<T>& gr, std::size_t self) {
    if (auto* gl = gr.grad_buffer(logits.id)) {
      kernels::softmax_cross_entropy_backward(*probs, *tgt, gr.grad(self)[0], *gl);
    }
  });
}

#define MSAMSEG_INSTANTIATE(T)                                             \
  template class Graph<T>;                                                 \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>);                          \
  template Var<T> conv_transpose2d(Var<T>, Var<T>, Var<T>);                \
  template Var<T> maxpool2d(Var<T>);                                       \
  template Var<T> relu(Var<T>);                                            \
  template Var<T> bilinear_resize(Var<T>, std::size_t, std::size_t);       \
  template Var<T> broadcast_mul(Var<T>, Var<T>);                           \
  template Var<T> concat_channels(Var<T>, Var<T>);                         \
  template Var<T> softmax_cross_entropy(Var<T>, const Tensor<T>&);

MSAMSEG_INSTANTIATE(float)
MSAMSEG_INSTANTIATE(double)
MSAMSEG_INSTANTIATE(long double)
#undef MSAMSEG_INSTANTIATE

}  // namespace msamseg
