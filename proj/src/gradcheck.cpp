#include "msamseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "msamseg/errors.hpp"
#include "msamseg/network.hpp"
#include "msamseg/rng.hpp"

namespace msamseg {

GradCheckReport check_trial(const GradCheckTrial& trial, double tolerance) {
  GradCheckReport r;
  r.trials = 1;
  const std::vector<Tensor<double>> analytic = trial.analytic(trial.operands);
  std::vector<Tensor<long double>> work;
  for (const auto& t : trial.operands) work.push_back(t.cast<long double>());
  for (std::size_t k = 0; k < work.size(); ++k) {
    for (std::size_t i = 0; i < work[k].size(); ++i) {
      const long double x = work[k][i];
      work[k][i] = x + kGradCheckStep;
      const long double fp = trial.value(work);
      work[k][i] = x - kGradCheckStep;
      const long double fm = trial.value(work);
      work[k][i] = x;
      const double numeric = static_cast<double>((fp - fm) / (2.0L * kGradCheckStep));
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      ++r.elements;
      if (rel > r.max_rel_error || !std::isfinite(rel)) {
        r.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        const std::string name = k < trial.names.size() ? trial.names[k] : "operand" + std::to_string(k);
        char buf[96];
        std::snprintf(buf, sizeof buf, "] analytic %.6e numeric %.6e", a, numeric);
        r.worst = name + "[" + std::to_string(i) + buf;
      }
    }
  }
  r.passed = r.max_rel_error < tolerance;
  return r;
}

namespace {

Tensor<double> randn(Shape s, Rng& rng, double sd = 1.0) {
  Tensor<double> t(s);
  for (auto& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

// Values bounded away from zero so no element sits on the ReLU kink.
Tensor<double> away_from_zero(Shape s, Rng& rng) {
  Tensor<double> t(s);
  for (auto& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return t;
}

// Pairwise gaps of at least 0.04 so no pooling window has a near tie.
Tensor<double> distinct(Shape s, Rng& rng) {
  Tensor<double> t(s);
  const std::size_t n = t.size();
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) rank[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(rank[i - 1], rank[rng.uniform_int(i)]);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = (static_cast<double>(rank[i]) - static_cast<double>(n) / 2) * 0.05 + rng.uniform(0.0, 0.01);
  }
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.uniform_int(hi - lo + 1); }

using Builder = GradCheckTrial (*)(Rng&, std::size_t trial);

// Operands are drawn first, then the upstream gradient, in that order.

GradCheckTrial conv2d_trial(Rng& rng, std::size_t t) {
  const std::size_t n = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
  const std::size_t k = t % 4 == 3 ? 1 : 3;
  const Shape xs{n, cin, pick(rng, 3, 6), pick(rng, 3, 6)};
  std::vector<Tensor<double>> ops{randn(xs, rng), randn({cout, cin, k, k}, rng, 0.5), randn({1, 1, 1, cout}, rng, 0.5)};
  auto up = randn({n, cout, xs.h, xs.w}, rng);
  return make_op_trial(std::move(ops), {"input", "weight", "bias"},
                       [](auto&, const auto& v) { return conv2d(v[0], v[1], v[2]); }, std::move(up));
}

GradCheckTrial conv_transpose2d_trial(Rng& rng, std::size_t) {
  const std::size_t n = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
  const Shape xs{n, cin, pick(rng, 2, 4), pick(rng, 2, 4)};
  std::vector<Tensor<double>> ops{randn(xs, rng), randn({cin, cout, 2, 2}, rng, 0.5), randn({1, 1, 1, cout}, rng, 0.5)};
  auto up = randn({n, cout, 2 * xs.h, 2 * xs.w}, rng);
  return make_op_trial(std::move(ops), {"input", "weight", "bias"},
                       [](auto&, const auto& v) { return conv_transpose2d(v[0], v[1], v[2]); }, std::move(up));
}

GradCheckTrial maxpool2d_trial(Rng& rng, std::size_t) {
  const Shape xs{pick(rng, 1, 2), pick(rng, 1, 2), 2 * pick(rng, 1, 3), 2 * pick(rng, 1, 3)};
  std::vector<Tensor<double>> ops{distinct(xs, rng)};
  auto up = randn({xs.n, xs.c, xs.h / 2, xs.w / 2}, rng);
  return make_op_trial(std::move(ops), {"input"}, [](auto&, const auto& v) { return maxpool2d(v[0]); }, std::move(up));
}

GradCheckTrial relu_trial(Rng& rng, std::size_t) {
  const Shape xs{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 2, 5)};
  std::vector<Tensor<double>> ops{away_from_zero(xs, rng)};
  auto up = randn(xs, rng);
  return make_op_trial(std::move(ops), {"input"}, [](auto&, const auto& v) { return relu(v[0]); }, std::move(up));
}

GradCheckTrial bilinear_trial(Rng& rng, std::size_t) {
  const Shape xs{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 5), pick(rng, 1, 5)};
  const std::size_t oh = pick(rng, 1, 9), ow = pick(rng, 1, 9);
  std::vector<Tensor<double>> ops{randn(xs, rng)};
  auto up = randn({xs.n, xs.c, oh, ow}, rng);
  return make_op_trial(std::move(ops), {"input"},
                       [oh, ow](auto&, const auto& v) { return bilinear_resize(v[0], oh, ow); }, std::move(up));
}

GradCheckTrial broadcast_mul_trial(Rng& rng, std::size_t) {
  const Shape xs{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 2, 5), pick(rng, 2, 5)};
  std::vector<Tensor<double>> ops{randn(xs, rng), randn({xs.n, 1, xs.h, xs.w}, rng)};
  auto up = randn(xs, rng);
  return make_op_trial(std::move(ops), {"features", "map"},
                       [](auto&, const auto& v) { return broadcast_mul(v[0], v[1]); }, std::move(up));
}

GradCheckTrial concat_trial(Rng& rng, std::size_t) {
  const std::size_t n = pick(rng, 1, 2), ca = pick(rng, 1, 3), cb = pick(rng, 1, 3), h = pick(rng, 1, 4),
                    w = pick(rng, 1, 4);
  std::vector<Tensor<double>> ops{randn({n, ca, h, w}, rng), randn({n, cb, h, w}, rng)};
  auto up = randn({n, ca + cb, h, w}, rng);
  return make_op_trial(std::move(ops), {"a", "b"},
                       [](auto&, const auto& v) { return concat_channels(v[0], v[1]); }, std::move(up));
}

GradCheckTrial softmax_ce_trial(Rng& rng, std::size_t) {
  const Shape ls{pick(rng, 1, 2), 2, pick(rng, 1, 4), pick(rng, 1, 4)};
  Tensor<double> target({ls.n, 1, ls.h, ls.w});
  for (auto& v : target.data()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  std::vector<Tensor<double>> ops{randn(ls, rng, 2.0)};
  return make_op_trial(std::move(ops), {"logits"}, [target](auto&, const auto& v) {
    using T = typename std::decay_t<decltype(v[0].value())>::value_type;
    return softmax_cross_entropy(v[0], target.cast<T>());
  });
}

GradCheckTrial gate_skip_trial(Rng& rng, std::size_t) {
  const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3), s = 2 * pick(rng, 1, 3);
  const std::size_t m = s * (1u << rng.uniform_int(3));  // map at the skip's resolution or finer
  std::vector<Tensor<double>> ops{randn({n, c, s, s}, rng), randn({n, 1, m, m}, rng)};
  auto up = randn({n, c, s, s}, rng);
  return make_op_trial(std::move(ops), {"skip", "map"}, [](auto&, const auto& v) { return gate_skip(v[0], v[1]); },
                       std::move(up));
}

// End-to-end: logits of a depth-2 model on a single 8x8 slice against a
// random upstream gradient, with respect to both modalities and every
// parameter.
GradCheckTrial model_trial(Rng& rng, std::size_t t) {
  static const std::pair<BackboneInput, MsamInput> kConfigs[] = {
      {BackboneInput::kCT, MsamInput::kPETCT},
      {BackboneInput::kPETCT, MsamInput::kPET},
      {BackboneInput::kPET, MsamInput::kOff},
  };
  ModelConfig config;
  config.backbone_input = kConfigs[t % 3].first;
  config.msam_input = kConfigs[t % 3].second;
  config.depth = 2;
  config.base_width = 2;
  config.height = 8;
  config.width = 8;
  NetworkParams<double> layout = build_model<double>(config, rng.next());
  // Zero biases would leave their gradients untested; redraw them.
  for (auto& e : layout.entries) {
    if (e.name.ends_with(".bias"))
      for (auto& v : e.value.data()) v = rng.normal(0.0, 0.1);
  }
  GradCheckTrial tr;
  tr.operands = {randn({1, 1, 8, 8}, rng), randn({1, 1, 8, 8}, rng)};
  tr.names = {"pet", "ct"};
  for (const auto& e : layout.entries) {
    tr.operands.push_back(e.value);
    tr.names.push_back(e.name);
  }
  const Tensor<double> upstream = randn({1, 2, 8, 8}, rng);

  tr.analytic = [config, layout, upstream](const std::vector<Tensor<double>>& ops) {
    NetworkParams<double> params = layout;
    for (std::size_t i = 0; i < params.entries.size(); ++i) params.entries[i].value = ops[i + 2];
    Graph<double> g;
    ForwardOptions<double> opts;
    opts.params_require_grad = true;
    opts.inputs_require_grad = true;
    const auto fg = build_forward(g, config, params, ops[0], ops[1], opts);
    g.backward(fg.logits, upstream);
    Tensor<double> gpet({1, 1, 8, 8}), gct({1, 1, 8, 8});
    // Route an assembled-input gradient back to the modalities it came from
    // (PET is channel 0 when both are present).
    auto route = [&](const Var<double>& v, bool pet, bool ct) {
      const auto& gr = v.grad();
      if (gr.empty()) return;
      for (std::size_t i = 0; i < 64; ++i) {
        if (pet) gpet[i] += gr.plane(0, 0)[i];
        if (ct) gct[i] += gr.plane(0, pet ? 1 : 0)[i];
      }
    };
    route(fg.backbone_input, config.backbone_input != BackboneInput::kCT, config.backbone_input != BackboneInput::kPET);
    if (fg.msam_input) route(*fg.msam_input, true, config.msam_input == MsamInput::kPETCT);
    std::vector<Tensor<double>> grads{gpet, gct};
    for (std::size_t i = 0; i < fg.params.size(); ++i) {
      const auto& gr = fg.params[i].grad();
      grads.push_back(gr.empty() ? Tensor<double>(ops[i + 2].shape()) : gr);
    }
    return grads;
  };
  tr.value = [config, layout = layout.cast<long double>(), upstream](const std::vector<Tensor<long double>>& ops) {
    NetworkParams<long double> params = layout;
    for (std::size_t i = 0; i < params.entries.size(); ++i) params.entries[i].value = ops[i + 2];
    Graph<long double> g;
    const auto fg = build_forward(g, config, params, ops[0], ops[1]);
    long double sum = 0;
    for (std::size_t i = 0; i < upstream.size(); ++i) sum += fg.logits.value()[i] * upstream[i];
    return sum;
  };
  return tr;
}

struct Registered {
  Builder build;
  std::size_t default_trials;
};

const std::map<std::string, Registered>& registry() {
  static const std::map<std::string, Registered> r = {
      {"conv2d", {conv2d_trial, 10}},
      {"conv_transpose2d", {conv_transpose2d_trial, 10}},
      {"maxpool2d", {maxpool2d_trial, 10}},
      {"relu", {relu_trial, 10}},
      {"bilinear_resize", {bilinear_trial, 10}},
      {"broadcast_mul", {broadcast_mul_trial, 10}},
      {"concat_channels", {concat_trial, 10}},
      {"softmax_cross_entropy", {softmax_ce_trial, 10}},
      {"gate_skip", {gate_skip_trial, 10}},
      {"model", {model_trial, 3}},
  };
  return r;
}

}  // namespace

std::vector<std::string> gradcheck_ops() {
  return {"conv2d",        "conv_transpose2d",      "maxpool2d", "relu", "bilinear_resize",
          "broadcast_mul", "concat_channels", "softmax_cross_entropy", "gate_skip", "model"};
}

GradCheckReport gradient_check(const std::string& op, double tolerance, std::uint64_t seed, std::size_t trials) {
  const auto& reg = registry();
  const auto it = reg.find(op);
  if (it == reg.end()) {
    std::string known;
    for (const auto& name : gradcheck_ops()) known += (known.empty() ? "" : ", ") + name;
    throw ConfigError("unknown operation '" + op + "'; registered: " + known);
  }
  const std::size_t n = trials ? trials : it->second.default_trials;
  GradCheckReport total;
  total.op = op;
  for (std::size_t t = 0; t < n; ++t) {
    Rng rng(derive_seed(seed, "gradcheck:" + op, t));
    const GradCheckReport r = check_trial(it->second.build(rng, t), tolerance);
    total.trials += 1;
    total.elements += r.elements;
    if (t == 0 || r.max_rel_error > total.max_rel_error) {
      total.max_rel_error = r.max_rel_error;
      total.worst = "trial " + std::to_string(t) + ": " + r.worst;
    }
  }
  total.passed = total.max_rel_error < tolerance;
  return total;
}

}  // namespace msamseg
