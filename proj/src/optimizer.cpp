#include "msamseg/optimizer.hpp"

#include <cmath>

namespace msamseg {

template <typename T>
OptimizerState<T> OptimizerState<T>::fresh(const NetworkParams<T>& params, AdamHyperparams hyper) {
  OptimizerState s;
  s.hyper = hyper;
  for (const auto& e : params.entries) {
    s.first_moment.emplace_back(e.value.shape());
    s.second_moment.emplace_back(e.value.shape());
  }
  return s;
}

template <typename T>
void adam_step(NetworkParams<T>& params, const std::vector<Tensor<T>>& grads, OptimizerState<T>& state) {
  if (grads.size() != params.entries.size() || state.first_moment.size() != params.entries.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients / " +
                     std::to_string(state.first_moment.size()) + " accumulators for " +
                     std::to_string(params.entries.size()) + " parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params.entries[i].value.shape()) {
      throw ShapeError("adam_step: gradient of " + params.entries[i].name + " has shape " +
                       to_string(grads[i].shape()));
    }
    if (!all_finite(grads[i])) {
      throw ValidationError("adam_step: non-finite gradient for parameter " + params.entries[i].name);
    }
  }

  state.step += 1;
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(h.beta1);
  const T b2 = static_cast<T>(h.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(h.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(h.beta2, t));
  const T lr = static_cast<T>(h.lr);
  const T eps = static_cast<T>(h.eps);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto p = params.entries[i].value.data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    auto g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T m_hat = m[j] / correction1;
      const T v_hat = v[j] / correction2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adam_step(NetworkParams<float>&, const std::vector<Tensor<float>>&, OptimizerState<float>&);
template void adam_step(NetworkParams<double>&, const std::vector<Tensor<double>>&, OptimizerState<double>&);

}  // namespace msamseg
