#pragma once

// Forward and backward kernels of the differentiable operators. Backward
// kernels accumulate (+=) into gradient buffers that the caller has sized;
// a null gradient pointer skips that branch.

#include <cstdint>
#include <vector>

#include "msamseg/tensor.hpp"

namespace msamseg::kernels {

// Same-padded stride-1 convolution. weight [Cout, Cin, k, k] with k odd.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     Tensor<T>* grad_x, Tensor<T>* grad_weight, Tensor<T>* grad_bias);

// Kernel-2 stride-2 transposed convolution. weight [Cin, Cout, 2, 2].
template <typename T>
Tensor<T> conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                               Tensor<T>* grad_x, Tensor<T>* grad_weight, Tensor<T>* grad_bias);

// 2x2 non-overlapping max pooling. argmax receives, per output element, the
// flat input index that won (first maximal element in row-major order).
template <typename T>
Tensor<T> maxpool2d_forward(const Tensor<T>& x, std::vector<std::uint32_t>& argmax);

template <typename T>
void maxpool2d_backward(const std::vector<std::uint32_t>& argmax, const Tensor<T>& grad_out, Tensor<T>& grad_x);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x);

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out, Tensor<T>& grad_x);

// Separable bilinear interpolation, half-pixel centres, edge clamped.
template <typename T>
Tensor<T> bilinear_resize_forward(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

template <typename T>
void bilinear_resize_backward(const Tensor<T>& grad_out, Tensor<T>& grad_x);

template <typename T>
Tensor<T> broadcast_mul_forward(const Tensor<T>& features, const Tensor<T>& map);

template <typename T>
void broadcast_mul_backward(const Tensor<T>& features, const Tensor<T>& map, const Tensor<T>& grad_out,
                            Tensor<T>* grad_features, Tensor<T>* grad_map);

template <typename T>
Tensor<T> concat_channels_forward(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
void concat_channels_backward(const Tensor<T>& grad_out, Tensor<T>* grad_a, Tensor<T>* grad_b);

// Two-class softmax over the channel axis.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits);

// Mean per-pixel negative log-likelihood of the target class. target holds
// {0,1}; channel 1 of logits is the tumour class. Writes probabilities.
template <typename T>
T softmax_cross_entropy_forward(const Tensor<T>& logits, const Tensor<T>& target, Tensor<T>& probabilities);

template <typename T>
void softmax_cross_entropy_backward(const Tensor<T>& probabilities, const Tensor<T>& target, T grad_loss,
                                    Tensor<T>& grad_logits);

}  // namespace msamseg::kernels
