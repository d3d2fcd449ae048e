#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "msamseg/autograd.hpp"
#include "msamseg/gradcheck.hpp"
#include "msamseg/kernels.hpp"
#include "msamseg/rng.hpp"

namespace msamseg {
namespace {

Tensor<double> random_tensor(Shape s, Rng& rng) {
  Tensor<double> t(s);
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  return std::inner_product(a.storage().begin(), a.storage().end(), b.storage().begin(), 0.0);
}

// Reference same-padded convolution written as a plain sliding window.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
  const auto [n, cin, h, wd] = x.shape();
  const std::size_t cout = w.shape().n, k = w.shape().h;
  const long pad = static_cast<long>(k / 2);
  Tensor<double> out({n, cout, h, wd});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < wd; ++c) {
          double s = b[o];
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t kr = 0; kr < k; ++kr)
              for (std::size_t kc = 0; kc < k; ++kc) {
                const long rr = static_cast<long>(r + kr) - pad, cc = static_cast<long>(c + kc) - pad;
                if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(wd)) continue;
                s += x.at(i, ci, rr, cc) * w.at(o, ci, kr, kc);
              }
          out.at(i, o, r, c) = s;
        }
  return out;
}

// Stride-2, kernel-2 convolution sharing the transposed-conv weight layout
// [Cin, Cout, 2, 2]: maps a (Cout, 2H, 2W) tensor to (Cin, H, W).
Tensor<double> conv_stride2(const Tensor<double>& y, const Tensor<double>& w) {
  const std::size_t cin = w.shape().n, cout = w.shape().c;
  const std::size_t h = y.shape().h / 2, wd = y.shape().w / 2;
  Tensor<double> out({y.shape().n, cin, h, wd});
  for (std::size_t i = 0; i < y.shape().n; ++i)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < wd; ++c) {
          double s = 0;
          for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t a = 0; a < 2; ++a)
              for (std::size_t bb = 0; bb < 2; ++bb) s += y.at(i, co, 2 * r + a, 2 * c + bb) * w.at(ci, co, a, bb);
          out.at(i, ci, r, c) = s;
        }
  return out;
}

TEST(Conv2d, ZeroInputGivesZero) {
  Rng rng(1);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const auto y = kernels::conv2d_forward(Tensor<double>({1, 2, 5, 5}), w, Tensor<double>({1, 1, 1, 3}));
  for (double v : y.storage()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  Rng rng(2);
  const auto x = random_tensor({1, 1, 6, 6}, rng);
  Tensor<double> w({1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  EXPECT_EQ(kernels::conv2d_forward(x, w, Tensor<double>({1, 1, 1, 1})), x);
}

TEST(Conv2d, OnesKernelSumsPaddedNeighbourhood) {
  Tensor<double> x({1, 1, 4, 4});
  std::iota(x.storage().begin(), x.storage().end(), 1.0);
  const Tensor<double> w({1, 1, 3, 3}, 1.0);
  const auto y = kernels::conv2d_forward(x, w, Tensor<double>({1, 1, 1, 1}));
  // Corner (0,0): 1+2+5+6; centre (1,1): 1..3 + 5..7 + 9..11.
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0), 14.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 1, 1), 54.0);
  EXPECT_EQ(y, naive_conv(x, w, Tensor<double>({1, 1, 1, 1})));
}

TEST(Conv2d, MatchesSlidingWindowOracle) {
  Rng rng(3);
  const auto x = random_tensor({2, 3, 7, 5}, rng);
  const auto w = random_tensor({4, 3, 3, 3}, rng);
  const auto b = random_tensor({4, 1, 1, 1}, rng);
  EXPECT_LT(max_abs_diff(kernels::conv2d_forward(x, w, b), naive_conv(x, w, b)), 1e-12);
}

TEST(Conv2d, LinearInInput) {
  Rng rng(4);
  const auto x = random_tensor({1, 2, 6, 6}, rng), y = random_tensor({1, 2, 6, 6}, rng);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor<double> b({3, 1, 1, 1});
  const double alpha = 0.7, beta = -1.3;
  Tensor<double> mix(x.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * x[i] + beta * y[i];
  const auto lhs = kernels::conv2d_forward(mix, w, b);
  const auto cx = kernels::conv2d_forward(x, w, b), cy = kernels::conv2d_forward(y, w, b);
  double worst = 0;
  for (std::size_t i = 0; i < lhs.size(); ++i) worst = std::max(worst, std::abs(lhs[i] - alpha * cx[i] - beta * cy[i]));
  EXPECT_LT(worst, 1e-10);
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(kernels::conv2d_forward(Tensor<double>({1, 2, 4, 4}), Tensor<double>({1, 3, 3, 3}),
                                       Tensor<double>({1, 1, 1, 1})),
               ShapeError);
}

TEST(ConvTranspose2d, ZeroInputGivesZero) {
  Rng rng(5);
  const auto y = kernels::conv_transpose2d_forward(Tensor<double>({1, 2, 3, 3}), random_tensor({2, 3, 2, 2}, rng),
                                                   Tensor<double>({3, 1, 1, 1}));
  EXPECT_EQ(y.shape(), (Shape{1, 3, 6, 6}));
  for (double v : y.storage()) EXPECT_EQ(v, 0.0);
}

TEST(ConvTranspose2d, SinglePixelScalesKernel) {
  const Tensor<double> x({1, 1, 1, 1}, std::vector<double>{2.5});
  const Tensor<double> k({1, 1, 2, 2}, std::vector<double>{1, -2, 3, 0.5});
  const auto y = kernels::conv_transpose2d_forward(x, k, Tensor<double>({1, 1, 1, 1}));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y[i], 2.5 * k[i]);
}

TEST(ConvTranspose2d, AdjointOfStride2Conv) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_tensor({1, 1, 2, 2}, rng);
    const auto y = random_tensor({1, 1, 4, 4}, rng);
    const auto w = random_tensor({1, 1, 2, 2}, rng);
    const auto up = kernels::conv_transpose2d_forward(x, w, Tensor<double>({1, 1, 1, 1}));
    EXPECT_NEAR(dot(up, y), dot(x, conv_stride2(y, w)), 1e-10);
  }
  const auto x = random_tensor({2, 3, 3, 2}, rng);
  const auto y = random_tensor({2, 4, 6, 4}, rng);
  const auto w = random_tensor({3, 4, 2, 2}, rng);
  const auto up = kernels::conv_transpose2d_forward(x, w, Tensor<double>({4, 1, 1, 1}));
  EXPECT_NEAR(dot(up, y), dot(x, conv_stride2(y, w)), 1e-10);
}

TEST(ConvTranspose2d, ChannelMismatchThrows) {
  EXPECT_THROW(kernels::conv_transpose2d_forward(Tensor<double>({1, 2, 2, 2}), Tensor<double>({3, 1, 2, 2}),
                                                 Tensor<double>({1, 1, 1, 1})),
               ShapeError);
}

TEST(Maxpool, ConstantPreserved) {
  std::vector<std::uint32_t> arg;
  const auto y = kernels::maxpool2d_forward(Tensor<double>({1, 2, 4, 6}, 1.5), arg);
  EXPECT_EQ(y, Tensor<double>({1, 2, 2, 3}, 1.5));
}

TEST(Maxpool, WindowMaxAndArgmaxRouting) {
  Graph<double> g;
  auto x = g.input(Tensor<double>({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}), true);
  auto y = maxpool2d(x);
  EXPECT_EQ(y.value(), Tensor<double>({1, 1, 1, 1}, std::vector<double>{4}));
  g.backward(y, Tensor<double>({1, 1, 1, 1}, 1.0));
  EXPECT_EQ(x.grad(), Tensor<double>({1, 1, 2, 2}, std::vector<double>{0, 0, 0, 1}));
}

TEST(Maxpool, TiesRouteToFirstElement) {
  Graph<double> g;
  auto x = g.input(Tensor<double>({1, 1, 2, 2}, 3.0), true);
  g.backward(maxpool2d(x), Tensor<double>({1, 1, 1, 1}, 1.0));
  EXPECT_EQ(x.grad(), Tensor<double>({1, 1, 2, 2}, std::vector<double>{1, 0, 0, 0}));
}

TEST(Maxpool, OutputDominatesWindow) {
  Rng rng(7);
  const auto x = random_tensor({2, 3, 8, 6}, rng);
  std::vector<std::uint32_t> arg;
  const auto y = kernels::maxpool2d_forward(x, arg);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t q = 0; q < 6; ++q) EXPECT_GE(y.at(n, c, r / 2, q / 2), x.at(n, c, r, q));
}

TEST(Maxpool, OddSizeThrows) {
  std::vector<std::uint32_t> arg;
  EXPECT_THROW(kernels::maxpool2d_forward(Tensor<double>({1, 1, 3, 4}), arg), ShapeError);
}

TEST(Relu, DefinitionAndSubgradient) {
  EXPECT_EQ(kernels::relu_forward(Tensor<double>({1, 1, 1, 3}, std::vector<double>{-1, 2, 0})),
            Tensor<double>({1, 1, 1, 3}, std::vector<double>{0, 2, 0}));
  const Tensor<double> pos({1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3});
  EXPECT_EQ(kernels::relu_forward(pos), pos);

  Graph<double> g;
  auto x = g.input(Tensor<double>({1, 1, 1, 3}, std::vector<double>{-1, 2, 0}), true);
  g.backward(relu(x), Tensor<double>({1, 1, 1, 3}, std::vector<double>{5, 7, 9}));
  EXPECT_EQ(x.grad(), Tensor<double>({1, 1, 1, 3}, std::vector<double>{0, 7, 0}));
}

TEST(BilinearResize, SameSizeIsBitwiseIdentity) {
  Rng rng(8);
  const auto x = random_tensor({2, 1, 5, 7}, rng);
  EXPECT_EQ(kernels::bilinear_resize_forward(x, 5, 7), x);
}

TEST(BilinearResize, ConstantsSurvive) {
  const Tensor<double> x({1, 1, 64, 64}, 0.37);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{32, 32}, {8, 8}, {3, 5}, {100, 70}, {1, 1}}) {
    EXPECT_EQ(kernels::bilinear_resize_forward(x, h, w), Tensor<double>({1, 1, h, w}, 0.37));
  }
}

// Scalar half-pixel reference: src = (t + 0.5) * in / out - 0.5, clamped.
double reference_sample(const std::vector<double>& row, std::size_t out_size, std::size_t t) {
  const double scale = static_cast<double>(row.size()) / static_cast<double>(out_size);
  double s = (static_cast<double>(t) + 0.5) * scale - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(row.size() - 1));
  const auto lo = static_cast<std::size_t>(std::floor(s));
  const std::size_t hi = std::min(lo + 1, row.size() - 1);
  const double f = s - static_cast<double>(lo);
  return row[lo] * (1 - f) + row[hi] * f;
}

TEST(BilinearResize, HorizontalRampDownsample) {
  Tensor<double> x({1, 1, 4, 4});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) x.at(0, 0, r, c) = static_cast<double>(c);
  const auto y = kernels::bilinear_resize_forward(x, 2, 2);
  const std::vector<double> row{0, 1, 2, 3};
  // Source columns 0.5 and 2.5.
  EXPECT_DOUBLE_EQ(reference_sample(row, 2, 0), 0.5);
  EXPECT_DOUBLE_EQ(reference_sample(row, 2, 1), 2.5);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(y.at(0, 0, r, c), reference_sample(row, 2, c));
}

TEST(BilinearResize, UpsampleMatchesScalarReference) {
  Tensor<double> x({1, 1, 1, 4}, std::vector<double>{0, 1, 2, 3});
  const auto y = kernels::bilinear_resize_forward(x, 1, 7);
  for (std::size_t c = 0; c < 7; ++c) EXPECT_NEAR(y.at(0, 0, 0, c), reference_sample({0, 1, 2, 3}, 7, c), 1e-15);
}

TEST(BilinearResize, ZeroTargetThrows) {
  EXPECT_THROW(kernels::bilinear_resize_forward(Tensor<double>({1, 1, 4, 4}), 0, 2), ShapeError);
}

TEST(BroadcastMul, IdentityZeroAndLoopOracle) {
  Rng rng(9);
  const auto f = random_tensor({1, 3, 2, 2}, rng);
  EXPECT_EQ(kernels::broadcast_mul_forward(f, Tensor<double>({1, 1, 2, 2}, 1.0)), f);
  EXPECT_EQ(kernels::broadcast_mul_forward(f, Tensor<double>({1, 1, 2, 2}, 0.0)), Tensor<double>(f.shape()));
  const auto m = random_tensor({1, 1, 2, 2}, rng);
  const auto y = kernels::broadcast_mul_forward(f, m);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t q = 0; q < 2; ++q) EXPECT_EQ(y.at(0, c, r, q), f.at(0, c, r, q) * m.at(0, 0, r, q));
}

TEST(BroadcastMul, MapGradientSumsChannels) {
  Rng rng(10);
  Graph<double> g;
  auto f = g.input(random_tensor({1, 3, 2, 2}, rng), true);
  auto m = g.input(random_tensor({1, 1, 2, 2}, rng), true);
  g.backward(broadcast_mul(f, m), Tensor<double>({1, 3, 2, 2}, 1.0));
  for (std::size_t p = 0; p < 4; ++p) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += f.value()[c * 4 + p];
    EXPECT_NEAR(m.grad()[p], s, 1e-15);
  }
}

TEST(BroadcastMul, ShapeErrors) {
  EXPECT_THROW(kernels::broadcast_mul_forward(Tensor<double>({1, 2, 4, 4}), Tensor<double>({1, 1, 2, 2})), ShapeError);
  EXPECT_THROW(kernels::broadcast_mul_forward(Tensor<double>({1, 2, 4, 4}), Tensor<double>({1, 2, 4, 4})), ShapeError);
}

TEST(ConcatChannels, ShapesAndRoundTrip) {
  Rng rng(11);
  const auto a = random_tensor({1, 2, 4, 4}, rng), b = random_tensor({1, 3, 4, 4}, rng);
  const auto y = kernels::concat_channels_forward(a, b);
  EXPECT_EQ(y.shape(), (Shape{1, 5, 4, 4}));
  EXPECT_EQ(slice_channels(y, 0, 2), a);
  EXPECT_EQ(slice_channels(y, 2, 5), b);
  EXPECT_EQ(kernels::concat_channels_forward(a, Tensor<double>({1, 0, 4, 4})), a);
  EXPECT_THROW(kernels::concat_channels_forward(a, Tensor<double>({1, 1, 2, 4})), ShapeError);
  EXPECT_THROW(kernels::concat_channels_forward(a, Tensor<double>({2, 1, 4, 4})), ShapeError);
}

TEST(SoftmaxCrossEntropy, EqualLogitsGiveLn2) {
  Tensor<double> probs;
  Tensor<double> target({2, 1, 3, 3});
  target[4] = 1;
  const double loss = kernels::softmax_cross_entropy_forward(Tensor<double>({2, 2, 3, 3}), target, probs);
  EXPECT_NEAR(loss, std::log(2.0), 1e-15);
}

TEST(SoftmaxCrossEntropy, ConfidentCorrectPixel) {
  Tensor<double> probs;
  const double loss = kernels::softmax_cross_entropy_forward(
      Tensor<double>({1, 2, 1, 1}, std::vector<double>{10, -10}), Tensor<double>({1, 1, 1, 1}), probs);
  EXPECT_NEAR(loss, std::log1p(std::exp(-20.0)), 1e-15);
  EXPECT_NEAR(loss, 2.061e-9, 1e-12);
}

TEST(SoftmaxCrossEntropy, MeanOverPixels) {
  Tensor<double> probs;
  // Pixel 0: equal logits (ln 2); pixel 1: overwhelming correct logit (~0).
  const Tensor<double> logits({1, 2, 1, 2}, std::vector<double>{0, 0, 0, 800});
  const Tensor<double> target({1, 1, 1, 2}, std::vector<double>{0, 1});
  EXPECT_NEAR(kernels::softmax_cross_entropy_forward(logits, target, probs), std::log(2.0) / 2, 1e-15);
}

TEST(SoftmaxCrossEntropy, ProbabilitiesSumToOneAndStable) {
  Rng rng(12);
  auto logits = random_tensor({2, 2, 5, 5}, rng);
  for (auto& v : logits.storage()) v *= 300;  // would overflow exp without max subtraction
  Tensor<double> probs;
  const double loss = kernels::softmax_cross_entropy_forward(logits, Tensor<double>({2, 1, 5, 5}), probs);
  EXPECT_TRUE(std::isfinite(loss));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < 25; ++p) EXPECT_NEAR(probs.plane(n, 0)[p] + probs.plane(n, 1)[p], 1.0, 1e-6);
}

TEST(SoftmaxCrossEntropy, NonBinaryTargetThrows) {
  Tensor<double> probs;
  EXPECT_THROW(kernels::softmax_cross_entropy_forward(Tensor<double>({1, 2, 1, 1}),
                                                      Tensor<double>({1, 1, 1, 1}, 0.5), probs),
               ValidationError);
}

TEST(GradCheck, EveryOpPassesTenTrials) {
  for (const auto& op : gradcheck_ops()) {
    if (op == "model") continue;
    const auto r = gradient_check(op, kGradCheckTolerance, 1, 10);
    EXPECT_TRUE(r.passed) << op << " max rel " << r.max_rel_error << " at " << r.worst;
    EXPECT_EQ(r.trials, 10u);
    EXPECT_GT(r.elements, 0u);
  }
}

TEST(GradCheck, ReluOnPositiveInputIsTight) {
  Rng rng(13);
  auto x = random_tensor({1, 2, 4, 4}, rng);
  for (auto& v : x.storage()) v = std::abs(v) + 0.1;
  auto trial = make_op_trial({x}, {"x"}, [](auto&, const auto& v) { return relu(v[0]); });
  const auto r = check_trial(trial, 1e-7);
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-7);
}

TEST(GradCheck, Conv2dOnFiveByFive) {
  Rng rng(14);
  const auto x = random_tensor({1, 2, 5, 5}, rng);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const auto b = random_tensor({3, 1, 1, 1}, rng);
  const auto up = random_tensor({1, 3, 5, 5}, rng);
  auto trial = make_op_trial({x, w, b}, {"x", "w", "b"},
                             [](auto&, const auto& v) { return conv2d(v[0], v[1], v[2]); }, up);
  EXPECT_TRUE(check_trial(trial, 1e-5).passed);
}

TEST(GradCheck, ZeroInputZeroUpstream) {
  auto trial = make_op_trial({Tensor<double>({1, 1, 3, 3})}, {"x"},
                             [](auto&, const auto& v) { return bilinear_resize(v[0], 2, 2); },
                             Tensor<double>({1, 1, 2, 2}));
  const auto r = check_trial(trial, 1e-5);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(GradCheck, TightToleranceFailsOnModel) {
  EXPECT_FALSE(gradient_check("model", 1e-12, 1, 1).passed);
}

TEST(GradCheck, UnknownOpListsRegistry) {
  try {
    gradient_check("conv3d");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const auto& op : gradcheck_ops()) EXPECT_NE(msg.find(op), std::string::npos) << op;
  }
}

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor<float>({1, 1, 2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(Autograd, GradientShapesMatchValues) {
  Rng rng(15);
  Graph<double> g;
  auto x = g.input(random_tensor({1, 2, 4, 4}, rng), true);
  auto w = g.input(random_tensor({3, 2, 3, 3}, rng), true);
  auto b = g.input(Tensor<double>({3, 1, 1, 1}), true);
  auto y = maxpool2d(relu(conv2d(x, w, b)));
  g.backward(y, Tensor<double>(y.shape(), 1.0));
  EXPECT_EQ(x.grad().shape(), x.shape());
  EXPECT_EQ(w.grad().shape(), w.shape());
  EXPECT_EQ(b.grad().shape(), b.shape());
  EXPECT_TRUE(all_finite(x.grad()));
}

}  // namespace
}  // namespace msamseg
