#include "msamseg/tensor.hpp"

#include <cmath>

namespace msamseg {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  const auto& s = x.shape();
  if (begin > end || end > s.c) throw ShapeError("slice_channels: bad range for " + to_string(s));
  Tensor<T> out(Shape{s.n, end - begin, s.h, s.w});
  const std::size_t span = (end - begin) * s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    if (span == 0) continue;
    std::copy_n(x.plane(n, begin), span, out.plane(n, 0));
  }
  return out;
}

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  const auto& s = x.shape();
  if (begin > end || end > s.n) throw ShapeError("slice_batch: bad range for " + to_string(s));
  const std::size_t item = s.c * s.plane();
  std::vector<T> data(x.storage().begin() + begin * item, x.storage().begin() + end * item);
  return Tensor<T>(Shape{end - begin, s.c, s.h, s.w}, std::move(data));
}

template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ShapeError("stack_batch: no items");
  Shape s = items.front().shape();
  std::vector<T> data;
  data.reserve(items.size() * s.numel());
  for (const auto& t : items) {
    if (t.shape() != s) throw ShapeError("stack_batch: " + to_string(t.shape()) + " vs " + to_string(s));
    data.insert(data.end(), t.storage().begin(), t.storage().end());
  }
  s.n *= items.size();
  return Tensor<T>(s, std::move(data));
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

#define MSAMSEG_INSTANTIATE(T)                                                      \
  template Tensor<T> slice_channels(const Tensor<T>&, std::size_t, std::size_t);    \
  template Tensor<T> slice_batch(const Tensor<T>&, std::size_t, std::size_t);       \
  template Tensor<T> stack_batch(std::span<const Tensor<T>>);                       \
  template bool all_finite(const Tensor<T>&);                                       \
  template T max_abs_diff(const Tensor<T>&, const Tensor<T>&);

MSAMSEG_INSTANTIATE(float)
MSAMSEG_INSTANTIATE(double)
MSAMSEG_INSTANTIATE(long double)
#undef MSAMSEG_INSTANTIATE

}  // namespace msamseg
