#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adderkernel/errors.hpp"
#include "adderkernel/fixed_point.hpp"

namespace adderkernel {

enum class KernelKind { adder, multiply };

std::string to_string(KernelKind k);
KernelKind parse_kernel_kind(const std::string& s);

struct ConvSpec {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  KernelKind kind = KernelKind::adder;

  // Throws ShapeError on zero dimensions or padding >= kernel size.
  void validate() const;
  std::size_t out_h(std::size_t in_h) const;
  std::size_t out_w(std::size_t in_w) const;
  std::size_t terms_per_output() const {
    return in_channels * kernel_h * kernel_w;
  }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

// Wide integer result of a conv/fc kernel. Values are exact; `acc_bits` is
// the declared hardware accumulator width and every element is checked
// against it. `frac_bits` is the scale exponent of the result.
struct AccTensor {
  Shape shape;
  std::vector<std::int64_t> data;
  int acc_bits = 64;
  int frac_bits = 0;

  std::size_t size() const { return data.size(); }
};

// F_out[co][h][w] = sum over (ci, ky, kx) of -|F_in[ci][h*s+ky-p][w*s+kx-p] -
// W[co][ci][ky][kx]| with zero padding. Feature and weight must share one
// QFormat. `threads` partitions output channels and never changes results.
AccTensor adder_conv2d(const QTensor& feature, const QTensor& weight,
                       const ConvSpec& spec, unsigned threads = 1);

// Integer cross-correlation. Formats may differ; the result scale exponent
// is the sum of both.
AccTensor mult_conv2d(const QTensor& feature, const QTensor& weight,
                      const ConvSpec& spec, unsigned threads = 1);

// out[m] = sum_n -|feature[n] - weight[m][n]|.
AccTensor adder_fc(const QTensor& feature, const QTensor& weight);
AccTensor mult_fc(const QTensor& feature, const QTensor& weight);

struct AffineResult {
  QTensor output;
  std::size_t saturated = 0;
};

// Arithmetic shift right with round-half-up: (v + 2^(shift-1)) >> shift.
std::int64_t round_shift(std::int64_t v, int shift);

// y = clamp(round_shift(x * mult[c], shift[c]) + bias[c]) into `out_format`,
// channel c being the leading dimension of x.
AffineResult batchnorm_affine(const AccTensor& x,
                              std::span<const std::int64_t> mult,
                              std::span<const int> shift,
                              std::span<const std::int64_t> bias,
                              const QFormat& out_format);

// Floor division rounding halves up: round(num / den) for den > 0.
std::int64_t div_round_half_up(std::int64_t num, std::int64_t den);

namespace detail {

inline void check_pool(const Shape& shape, std::size_t window,
                       std::size_t stride) {
  if (shape.size() != 3) throw ShapeError("pool: expected [C,H,W] input");
  if (window == 0 || stride == 0) throw ShapeError("pool: zero window/stride");
  if (window > shape[1] || window > shape[2]) {
    throw ShapeError("pool: window " + std::to_string(window) +
                     " larger than input " + shape_to_string(shape));
  }
}

template <typename T, typename Reduce>
T pool2d(const T& x, std::size_t window, std::size_t stride, Reduce reduce) {
  check_pool(x.shape, window, stride);
  const std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
  const std::size_t oh = (h - window) / stride + 1;
  const std::size_t ow = (w - window) / stride + 1;
  T out = x;
  out.shape = {c, oh, ow};
  out.data.assign(c * oh * ow, {});
  using V = typename decltype(x.data)::value_type;
  std::vector<V> win(window * window);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t k = 0;
        for (std::size_t di = 0; di < window; ++di) {
          for (std::size_t dj = 0; dj < window; ++dj) {
            win[k++] = x.data[(ch * h + i * stride + di) * w + j * stride + dj];
          }
        }
        out.data[(ch * oh + i) * ow + j] = reduce(win);
      }
    }
  }
  return out;
}

}  // namespace detail

// Pooling over [C,H,W] QTensor or AccTensor, floor output size.
template <typename T>
T maxpool2d(const T& x, std::size_t window, std::size_t stride) {
  return detail::pool2d(x, window, stride, [](const auto& win) {
    return *std::max_element(win.begin(), win.end());
  });
}

template <typename T>
T avgpool2d(const T& x, std::size_t window, std::size_t stride) {
  return detail::pool2d(x, window, stride, [](const auto& win) {
    std::int64_t sum = 0;
    for (auto v : win) sum += v;
    using V = typename std::decay_t<decltype(win)>::value_type;
    return static_cast<V>(
        div_round_half_up(sum, static_cast<std::int64_t>(win.size())));
  });
}

template <typename T>
T relu(T x) {
  for (auto& v : x.data) v = std::max<decltype(+v)>(v, 0);
  return x;
}

}  // namespace adderkernel
