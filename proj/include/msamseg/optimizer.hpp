#pragma once

#include <cstdint>
#include <vector>

#include "msamseg/network.hpp"

namespace msamseg {

struct AdamHyperparams {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  friend bool operator==(const AdamHyperparams&, const AdamHyperparams&) = default;
};

template <typename T>
struct OptimizerState {
  AdamHyperparams hyper;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> first_moment;   // aligned with NetworkParams::entries
  std::vector<Tensor<T>> second_moment;

  static OptimizerState fresh(const NetworkParams<T>& params, AdamHyperparams hyper = {});
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

// One bias-corrected Adam update:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
//   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
// Throws ValidationError naming the parameter when a gradient is not finite;
// nothing is modified in that case.
template <typename T>
void adam_step(NetworkParams<T>& params, const std::vector<Tensor<T>>& grads, OptimizerState<T>& state);

}  // namespace msamseg
