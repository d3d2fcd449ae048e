#include "msamseg/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "msamseg/parallel.hpp"

namespace msamseg::kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

std::size_t kernel_size(const Shape& w) { return w.h; }

template <typename T>
void check_conv_shapes(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws.h != ws.w || ws.h % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd size, got " + to_string(ws));
  }
  if (xs.c != ws.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                     std::to_string(ws.c));
  }
  if (b.size() != ws.n) {
    throw ShapeError("conv2d: bias length " + std::to_string(b.size()) + " != output channels " +
                     std::to_string(ws.n));
  }
}

// Unfold one sample into a (Cin*k*k) x (H*W) matrix with zero padding.
template <typename T>
void im2col(const T* src, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto hh = static_cast<std::ptrdiff_t>(h);
  const auto ww = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = src + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * h * w;
        const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::ptrdiff_t y = 0; y < hh; ++y) {
          T* out = row + y * ww;
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= hh) {
            std::fill(out, out + ww, T(0));
            continue;
          }
          const T* in = plane + sy * ww;
          const std::ptrdiff_t x0 = std::min(ww, std::max<std::ptrdiff_t>(0, -dx));
          const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(ww, ww - dx);
          std::fill(out, out + x0, T(0));
          for (std::ptrdiff_t x = x0; x < x1; ++x) out[x] = in[x + dx];
          std::fill(out + std::max(x1, x0), out + ww, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, T* dst) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto hh = static_cast<std::ptrdiff_t>(h);
  const auto ww = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = dst + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * h * w;
        const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::ptrdiff_t y = 0; y < hh; ++y) {
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= hh) continue;
          const T* in = row + y * ww;
          T* out = plane + sy * ww;
          const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
          const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(ww, ww - dx);
          for (std::ptrdiff_t x = x0; x < x1; ++x) out[x + dx] += in[x];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  check_conv_shapes(x, weight, bias);
  const auto& xs = x.shape();
  const std::size_t cout = weight.shape().n;
  const std::size_t k = kernel_size(weight.shape());
  const std::size_t kdim = xs.c * k * k;
  const std::size_t hw = xs.plane();
  Tensor<T> out(Shape{xs.n, cout, xs.h, xs.w});
  ConstMapMat<T> wmat(weight.data().data(), cout, kdim);

  parallel_for(xs.n, [&](std::size_t n) {
    MapMat<T> y(out.plane(n, 0), cout, hw);
    if (k == 1) {
      y.noalias() = wmat * ConstMapMat<T>(x.plane(n, 0), kdim, hw);
    } else {
      AlignedVector<T> col(kdim * hw);
      im2col(x.plane(n, 0), xs.c, xs.h, xs.w, k, col.data());
      y.noalias() = wmat * ConstMapMat<T>(col.data(), kdim, hw);
    }
    for (std::size_t co = 0; co < cout; ++co) y.row(co).array() += bias[co];
  });
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out, Tensor<T>* grad_x,
                     Tensor<T>* grad_weight, Tensor<T>* grad_bias) {
  const auto& xs = x.shape();
  const std::size_t cout = weight.shape().n;
  const std::size_t k = kernel_size(weight.shape());
  const std::size_t kdim = xs.c * k * k;
  const std::size_t hw = xs.plane();
  ConstMapMat<T> wmat(weight.data().data(), cout, kdim);

  // Per-sample parameter gradients, reduced afterwards in sample order.
  AlignedVector<T> partial_w(grad_weight ? xs.n * cout * kdim : 0);
  AlignedVector<T> partial_b(grad_bias ? xs.n * cout : 0);

  parallel_for(xs.n, [&](std::size_t n) {
    ConstMapMat<T> gy(grad_out.plane(n, 0), cout, hw);
    AlignedVector<T> col;
    const T* colp = x.plane(n, 0);
    if (k != 1 && grad_weight) {
      col.resize(kdim * hw);
      im2col(x.plane(n, 0), xs.c, xs.h, xs.w, k, col.data());
      colp = col.data();
    }
    if (grad_weight) {
      MapMat<T>(partial_w.data() + n * cout * kdim, cout, kdim).noalias() =
          gy * ConstMapMat<T>(colp, kdim, hw).transpose();
    }
    if (grad_bias) {
      for (std::size_t co = 0; co < cout; ++co) partial_b[n * cout + co] = gy.row(co).sum();
    }
    if (grad_x) {
      if (k == 1) {
        MapMat<T> gx(grad_x->plane(n, 0), kdim, hw);
        RowMat<T> tmp = wmat.transpose() * gy;
        gx += tmp;
      } else {
        RowMat<T> dcol = wmat.transpose() * gy;
        col2im_add(dcol.data(), xs.c, xs.h, xs.w, k, grad_x->plane(n, 0));
      }
    }
  });

  for (std::size_t n = 0; n < xs.n; ++n) {
    if (grad_weight) {
      const T* src = partial_w.data() + n * cout * kdim;
      auto dst = grad_weight->data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    if (grad_bias) {
      for (std::size_t co = 0; co < cout; ++co) (*grad_bias)[co] += partial_b[n * cout + co];
    }
  }
}

template <typename T>
Tensor<T> conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (ws.h != 2 || ws.w != 2) throw ShapeError("conv_transpose2d: kernel must be 2x2, got " + to_string(ws));
  if (ws.n != xs.c) {
    throw ShapeError("conv_transpose2d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                     std::to_string(ws.n));
  }
  if (bias.size() != ws.c) throw ShapeError("conv_transpose2d: bias length mismatch");
  if (xs.h == 0 || xs.w == 0) throw ShapeError("conv_transpose2d: empty spatial input");
  const std::size_t cin = xs.c;
  const std::size_t cout = ws.c;
  const std::size_t hw = xs.plane();
  const std::size_t ow = 2 * xs.w;
  Tensor<T> out(Shape{xs.n, cout, 2 * xs.h, ow});
  ConstMapMat<T> wmat(weight.data().data(), cin, cout * 4);

  parallel_for(xs.n, [&](std::size_t n) {
    RowMat<T> y = wmat.transpose() * ConstMapMat<T>(x.plane(n, 0), cin, hw);
    for (std::size_t co = 0; co < cout; ++co) {
      T* dst = out.plane(n, co);
      for (std::size_t d = 0; d < 4; ++d) {
        const std::size_t di = d / 2;
        const std::size_t dj = d % 2;
        const T* row = y.data() + (co * 4 + d) * hw;
        for (std::size_t i = 0; i < xs.h; ++i) {
          for (std::size_t j = 0; j < xs.w; ++j) {
            dst[(2 * i + di) * ow + 2 * j + dj] = row[i * xs.w + j] + bias[co];
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                               Tensor<T>* grad_x, Tensor<T>* grad_weight, Tensor<T>* grad_bias) {
  const auto& xs = x.shape();
  const std::size_t cin = xs.c;
  const std::size_t cout = weight.shape().c;
  const std::size_t hw = xs.plane();
  const std::size_t ow = 2 * xs.w;
  ConstMapMat<T> wmat(weight.data().data(), cin, cout * 4);

  AlignedVector<T> partial_w(grad_weight ? xs.n * cin * cout * 4 : 0);
  AlignedVector<T> partial_b(grad_bias ? xs.n * cout : 0);

  parallel_for(xs.n, [&](std::size_t n) {
    // Gather the output gradient back into the (Cout*4) x (H*W) layout.
    RowMat<T> g(cout * 4, hw);
    for (std::size_t co = 0; co < cout; ++co) {
      const T* src = grad_out.plane(n, co);
      for (std::size_t d = 0; d < 4; ++d) {
        const std::size_t di = d / 2;
        const std::size_t dj = d % 2;
        T* row = g.data() + (co * 4 + d) * hw;
        for (std::size_t i = 0; i < xs.h; ++i) {
          for (std::size_t j = 0; j < xs.w; ++j) row[i * xs.w + j] = src[(2 * i + di) * ow + 2 * j + dj];
        }
      }
    }
    if (grad_x) {
      MapMat<T> gx(grad_x->plane(n, 0), cin, hw);
      RowMat<T> tmp = wmat * g;
      gx += tmp;
    }
    if (grad_weight) {
      MapMat<T>(partial_w.data() + n * cin * cout * 4, cin, cout * 4).noalias() =
          ConstMapMat<T>(x.plane(n, 0), cin, hw) * g.transpose();
    }
    if (grad_bias) {
      for (std::size_t co = 0; co < cout; ++co) {
        partial_b[n * cout + co] = g.middleRows(co * 4, 4).sum();
      }
    }
  });

  for (std::size_t n = 0; n < xs.n; ++n) {
    if (grad_weight) {
      const T* src = partial_w.data() + n * cin * cout * 4;
      auto dst = grad_weight->data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    if (grad_bias) {
      for (std::size_t co = 0; co < cout; ++co) (*grad_bias)[co] += partial_b[n * cout + co];
    }
  }
}

template <typename T>
Tensor<T> maxpool2d_forward(const Tensor<T>& x, std::vector<std::uint32_t>& argmax) {
  const auto& xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0) throw ShapeError("maxpool2d: odd spatial size " + to_string(xs));
  Tensor<T> out(Shape{xs.n, xs.c, xs.h / 2, xs.w / 2});
  argmax.assign(out.size(), 0);
  const std::size_t oh = xs.h / 2;
  const std::size_t ow = xs.w / 2;
  for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
    const std::size_t in_base = p * xs.plane();
    const std::size_t out_base = p * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = in_base + 2 * i * xs.w + 2 * j;
        const std::size_t cand[3] = {best + 1, best + xs.w, best + xs.w + 1};
        for (std::size_t c : cand) {
          if (x[c] > x[best]) best = c;
        }
        out[out_base + i * ow + j] = x[best];
        argmax[out_base + i * ow + j] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return out;
}

template <typename T>
void maxpool2d_backward(const std::vector<std::uint32_t>& argmax, const Tensor<T>& grad_out, Tensor<T>& grad_x) {
  for (std::size_t i = 0; i < argmax.size(); ++i) grad_x[argmax[i]] += grad_out[i];
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out, Tensor<T>& grad_x) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > T(0)) grad_x[i] += grad_out[i];
  }
}

namespace {

// Source taps for one axis: out[t] = in[lo] + frac * (in[hi] - in[lo]).
struct Taps {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> frac;
};

Taps make_taps(std::size_t in, std::size_t out) {
  Taps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t t = 0; t < out; ++t) {
    double src = (static_cast<double>(t) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    taps.lo[t] = lo;
    taps.hi[t] = std::min(lo + 1, in - 1);
    taps.frac[t] = src - static_cast<double>(lo);
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize_forward(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  const auto& xs = x.shape();
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: zero target dimension");
  if (xs.h == 0 || xs.w == 0) throw ShapeError("bilinear_resize: empty input");
  Tensor<T> out(Shape{xs.n, xs.c, out_h, out_w});
  if (out_h == xs.h && out_w == xs.w) {
    out.storage() = x.storage();
    return out;
  }
  const Taps ty = make_taps(xs.h, out_h);
  const Taps tx = make_taps(xs.w, out_w);
  AlignedVector<T> rows(xs.h * out_w);
  for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
    const T* in = x.data().data() + p * xs.plane();
    T* dst = out.data().data() + p * out_h * out_w;
    for (std::size_t y = 0; y < xs.h; ++y) {
      for (std::size_t t = 0; t < out_w; ++t) {
        const T a = in[y * xs.w + tx.lo[t]];
        const T b = in[y * xs.w + tx.hi[t]];
        rows[y * out_w + t] = a + static_cast<T>(tx.frac[t]) * (b - a);
      }
    }
    for (std::size_t t = 0; t < out_h; ++t) {
      const T* a = rows.data() + ty.lo[t] * out_w;
      const T* b = rows.data() + ty.hi[t] * out_w;
      const auto f = static_cast<T>(ty.frac[t]);
      for (std::size_t j = 0; j < out_w; ++j) dst[t * out_w + j] = a[j] + f * (b[j] - a[j]);
    }
  }
  return out;
}

template <typename T>
void bilinear_resize_backward(const Tensor<T>& grad_out, Tensor<T>& grad_x) {
  const auto& xs = grad_x.shape();
  const auto& os = grad_out.shape();
  if (os.h == xs.h && os.w == xs.w) {
    for (std::size_t i = 0; i < grad_x.size(); ++i) grad_x[i] += grad_out[i];
    return;
  }
  const Taps ty = make_taps(xs.h, os.h);
  const Taps tx = make_taps(xs.w, os.w);
  AlignedVector<T> rows(xs.h * os.w);
  for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
    const T* g = grad_out.data().data() + p * os.plane();
    T* dst = grad_x.data().data() + p * xs.plane();
    std::fill(rows.begin(), rows.end(), T(0));
    for (std::size_t t = 0; t < os.h; ++t) {
      const auto f = static_cast<T>(ty.frac[t]);
      T* a = rows.data() + ty.lo[t] * os.w;
      T* b = rows.data() + ty.hi[t] * os.w;
      for (std::size_t j = 0; j < os.w; ++j) {
        a[j] += (T(1) - f) * g[t * os.w + j];
        b[j] += f * g[t * os.w + j];
      }
    }
    for (std::size_t y = 0; y < xs.h; ++y) {
      for (std::size_t t = 0; t < os.w; ++t) {
        const auto f = static_cast<T>(tx.frac[t]);
        const T r = rows[y * os.w + t];
        dst[y * xs.w + tx.lo[t]] += (T(1) - f) * r;
        dst[y * xs.w + tx.hi[t]] += f * r;
      }
    }
  }
}

template <typename T>
Tensor<T> broadcast_mul_forward(const Tensor<T>& features, const Tensor<T>& map) {
  const auto& fs = features.shape();
  const auto& ms = map.shape();
  if (ms.c != 1) throw ShapeError("broadcast_mul: map must have one channel, got " + to_string(ms));
  if (fs.n != ms.n || fs.h != ms.h || fs.w != ms.w) {
    throw ShapeError("broadcast_mul: features " + to_string(fs) + " vs map " + to_string(ms));
  }
  Tensor<T> out(fs);
  for (std::size_t n = 0; n < fs.n; ++n) {
    const T* m = map.plane(n, 0);
    for (std::size_t c = 0; c < fs.c; ++c) {
      const T* f = features.plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < fs.plane(); ++i) o[i] = f[i] * m[i];
    }
  }
  return out;
}

template <typename T>
void broadcast_mul_backward(const Tensor<T>& features, const Tensor<T>& map, const Tensor<T>& grad_out,
                            Tensor<T>* grad_features, Tensor<T>* grad_map) {
  const auto& fs = features.shape();
  for (std::size_t n = 0; n < fs.n; ++n) {
    const T* m = map.plane(n, 0);
    for (std::size_t c = 0; c < fs.c; ++c) {
      const T* g = grad_out.plane(n, c);
      const T* f = features.plane(n, c);
      if (grad_features) {
        T* gf = grad_features->plane(n, c);
        for (std::size_t i = 0; i < fs.plane(); ++i) gf[i] += g[i] * m[i];
      }
      if (grad_map) {
        T* gm = grad_map->plane(n, 0);
        for (std::size_t i = 0; i < fs.plane(); ++i) gm[i] += g[i] * f[i];
      }
    }
  }
}

template <typename T>
Tensor<T> concat_channels_forward(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw ShapeError("concat_channels: " + to_string(as) + " vs " + to_string(bs));
  }
  Tensor<T> out(Shape{as.n, as.c + bs.c, as.h, as.w});
  const std::size_t pa = as.c * as.plane();
  const std::size_t pb = bs.c * bs.plane();
  for (std::size_t n = 0; n < as.n; ++n) {
    T* dst = out.data().data() + n * (pa + pb);
    std::copy_n(a.data().data() + n * pa, pa, dst);
    std::copy_n(b.data().data() + n * pb, pb, dst + pa);
  }
  return out;
}

template <typename T>
void concat_channels_backward(const Tensor<T>& grad_out, Tensor<T>* grad_a, Tensor<T>* grad_b) {
  const auto& os = grad_out.shape();
  const std::size_t ca = grad_a ? grad_a->shape().c : os.c - grad_b->shape().c;
  const std::size_t pa = ca * os.plane();
  const std::size_t pb = (os.c - ca) * os.plane();
  for (std::size_t n = 0; n < os.n; ++n) {
    const T* src = grad_out.data().data() + n * (pa + pb);
    if (grad_a) {
      T* dst = grad_a->data().data() + n * pa;
      for (std::size_t i = 0; i < pa; ++i) dst[i] += src[i];
    }
    if (grad_b) {
      T* dst = grad_b->data().data() + n * pb;
      for (std::size_t i = 0; i < pb; ++i) dst[i] += src[pa + i];
    }
  }
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  const auto& s = logits.shape();
  if (s.c != 2) throw ShapeError("softmax: expected 2 channels, got " + to_string(s));
  Tensor<T> probs(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* l0 = logits.plane(n, 0);
    const T* l1 = logits.plane(n, 1);
    T* p0 = probs.plane(n, 0);
    T* p1 = probs.plane(n, 1);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const T m = std::max(l0[i], l1[i]);
      const T e0 = std::exp(l0[i] - m);
      const T e1 = std::exp(l1[i] - m);
      const T z = e0 + e1;
      p0[i] = e0 / z;
      p1[i] = e1 / z;
    }
  }
  return probs;
}

template <typename T>
T softmax_cross_entropy_forward(const Tensor<T>& logits, const Tensor<T>& target, Tensor<T>& probabilities) {
  const auto& s = logits.shape();
  const auto& ts = target.shape();
  if (s.c != 2) throw ShapeError("softmax_cross_entropy: expected 2 logit channels, got " + to_string(s));
  if (ts.n != s.n || ts.c != 1 || ts.h != s.h || ts.w != s.w) {
    throw ShapeError("softmax_cross_entropy: target " + to_string(ts) + " vs logits " + to_string(s));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] != T(0) && target[i] != T(1)) {
      throw ValidationError("softmax_cross_entropy: target value " + std::to_string(target[i]) +
                            " at index " + std::to_string(i) + " is not binary");
    }
  }
  probabilities = Tensor<T>(s);
  using Acc = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;
  Acc total = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* l0 = logits.plane(n, 0);
    const T* l1 = logits.plane(n, 1);
    const T* tg = target.plane(n, 0);
    T* p0 = probabilities.plane(n, 0);
    T* p1 = probabilities.plane(n, 1);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const Acc a = l0[i];
      const Acc b = l1[i];
      const Acc m = std::max(a, b);
      const Acc lse = m + std::log(std::exp(a - m) + std::exp(b - m));
      p0[i] = static_cast<T>(std::exp(a - lse));
      p1[i] = static_cast<T>(std::exp(b - lse));
      total += lse - (tg[i] != T(0) ? b : a);
    }
  }
  return static_cast<T>(total / static_cast<Acc>(s.n * s.plane()));
}

template <typename T>
void softmax_cross_entropy_backward(const Tensor<T>& probabilities, const Tensor<T>& target, T grad_loss,
                                    Tensor<T>& grad_logits) {
  const auto& s = probabilities.shape();
  const T scale = grad_loss / static_cast<T>(s.n * s.plane());
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* p0 = probabilities.plane(n, 0);
    const T* p1 = probabilities.plane(n, 1);
    const T* tg = target.plane(n, 0);
    T* g0 = grad_logits.plane(n, 0);
    T* g1 = grad_logits.plane(n, 1);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const T t1 = tg[i];
      g0[i] += scale * (p0[i] - (T(1) - t1));
      g1[i] += scale * (p1[i] - t1);
    }
  }
}

#define MSAMSEG_INSTANTIATE(T)                                                                                   \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*,     \
                                Tensor<T>*);                                                                     \
  template Tensor<T> conv_transpose2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template void conv_transpose2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*,       \
                                          Tensor<T>*, Tensor<T>*);                                               \
  template Tensor<T> maxpool2d_forward(const Tensor<T>&, std::vector<std::uint32_t>&);                            \
  template void maxpool2d_backward(const std::vector<std::uint32_t>&, const Tensor<T>&, Tensor<T>&);              \
  template Tensor<T> relu_forward(const Tensor<T>&);                                                             \
  template void relu_backward(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                                   \
  template Tensor<T> bilinear_resize_forward(const Tensor<T>&, std::size_t, std::size_t);                        \
  template void bilinear_resize_backward(const Tensor<T>&, Tensor<T>&);                                          \
  template Tensor<T> broadcast_mul_forward(const Tensor<T>&, const Tensor<T>&);                                  \
  template void broadcast_mul_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*,          \
                                       Tensor<T>*);                                                              \
  template Tensor<T> concat_channels_forward(const Tensor<T>&, const Tensor<T>&);                                \
  template void concat_channels_backward(const Tensor<T>&, Tensor<T>*, Tensor<T>*);                              \
  template Tensor<T> softmax_channels(const Tensor<T>&);                                                         \
  template T softmax_cross_entropy_forward(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                      \
  template void softmax_cross_entropy_backward(const Tensor<T>&, const Tensor<T>&, T, Tensor<T>&);

MSAMSEG_INSTANTIATE(float)
MSAMSEG_INSTANTIATE(double)
MSAMSEG_INSTANTIATE(long double)
#undef MSAMSEG_INSTANTIATE

}  // namespace msamseg::kernels
