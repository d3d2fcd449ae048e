#pragma once

// Finite-difference verification of the analytic gradients, in double
// precision. Each trial draws small random operands, reduces the operator
// output to a scalar through a fixed random upstream gradient R
// (L = sum(out * R)), and compares backward() against central differences
// with step 1e-6 for every element of every differentiable operand:
//
//   rel = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msamseg/autograd.hpp"

namespace msamseg {

inline constexpr double kGradCheckStep = 1e-6;
inline constexpr double kGradCheckFloor = 1e-8;
inline constexpr double kGradCheckTolerance = 1e-5;

struct GradCheckReport {
  std::string op;
  std::size_t trials = 0;
  std::size_t elements = 0;  // operand elements compared
  double max_rel_error = 0;
  std::string worst;  // where max_rel_error occurred
  bool passed = false;
};

// A trial evaluates the same scalar objective twice: in double, returning
// the analytic gradients under test, and in long double for the central
// differences, so that rounding in the forward pass stays well below the
// comparison floor.
struct GradCheckTrial {
  std::vector<Tensor<double>> operands;
  std::vector<std::string> names;
  std::function<std::vector<Tensor<double>>(const std::vector<Tensor<double>>&)> analytic;
  std::function<long double(const std::vector<Tensor<long double>>&)> value;
};

// Trial for L = sum(fn(graph, vars) * upstream), where `fn` is generic over
// the scalar type. An empty upstream means ones.
template <typename Fn>
GradCheckTrial make_op_trial(std::vector<Tensor<double>> operands, std::vector<std::string> names, Fn fn,
                             Tensor<double> upstream = {}) {
  GradCheckTrial t;
  t.operands = std::move(operands);
  t.names = std::move(names);
  t.analytic = [fn, upstream](const std::vector<Tensor<double>>& ops) {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (const auto& x : ops) vars.push_back(g.input(x, true));
    const Var<double> out = fn(g, vars);
    g.backward(out, upstream.empty() ? Tensor<double>(out.shape(), 1.0) : upstream);
    std::vector<Tensor<double>> grads;
    for (std::size_t i = 0; i < vars.size(); ++i) {
      grads.push_back(vars[i].grad().empty() ? Tensor<double>(ops[i].shape()) : vars[i].grad());
    }
    return grads;
  };
  t.value = [fn, upstream](const std::vector<Tensor<long double>>& ops) {
    Graph<long double> g;
    std::vector<Var<long double>> vars;
    for (const auto& x : ops) vars.push_back(g.input(x, false));
    const Var<long double> out = fn(g, vars);
    long double sum = 0;
    for (std::size_t i = 0; i < out.value().size(); ++i) {
      sum += out.value()[i] * (upstream.empty() ? 1.0L : static_cast<long double>(upstream[i]));
    }
    return sum;
  };
  return t;
}

// Runs a single trial; exposed for tests that craft their own operands.
GradCheckReport check_trial(const GradCheckTrial& trial, double tolerance);

// Registered identifiers: the differentiable operators plus "gate_skip" and
// "model" (end-to-end on 8x8 inputs).
std::vector<std::string> gradcheck_ops();

// Throws ConfigError listing the registered identifiers for an unknown op.
GradCheckReport gradient_check(const std::string& op, double tolerance = kGradCheckTolerance, std::uint64_t seed = 1,
                               std::size_t trials = 0);  // 0 = default per op

}  // namespace msamseg
