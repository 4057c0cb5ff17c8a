#include "adderkernel/kernels.hpp"

#include <cstdlib>
#include <limits>
#include <thread>

#include "adderkernel/hardware_model.hpp"

namespace adderkernel {

std::string to_string(KernelKind k) {
  return k == KernelKind::adder ? "adder" : "mult";
}

KernelKind parse_kernel_kind(const std::string& s) {
  if (s == "adder") return KernelKind::adder;
  if (s == "mult" || s == "multiply") return KernelKind::multiply;
  throw std::invalid_argument("unknown kernel kind '" + s + "'");
}

void ConvSpec::validate() const {
  if (kernel_h == 0 || kernel_w == 0 || in_channels == 0 || out_channels == 0 ||
      stride_h == 0 || stride_w == 0) {
    throw ShapeError("ConvSpec: all dimensions must be >= 1");
  }
  if (pad_h >= kernel_h || pad_w >= kernel_w) {
    throw ShapeError("ConvSpec: padding must be smaller than the kernel");
  }
}

std::size_t ConvSpec::out_h(std::size_t in_h) const {
  if (in_h + 2 * pad_h < kernel_h) throw ShapeError("ConvSpec: input too small");
  return (in_h + 2 * pad_h - kernel_h) / stride_h + 1;
}

std::size_t ConvSpec::out_w(std::size_t in_w) const {
  if (in_w + 2 * pad_w < kernel_w) throw ShapeError("ConvSpec: input too small");
  return (in_w + 2 * pad_w - kernel_w) / stride_w + 1;
}

namespace {

void check_conv_shapes(const QTensor& feature, const QTensor& weight,
                       const ConvSpec& spec) {
  spec.validate();
  if (feature.shape.size() != 3 || feature.shape[0] != spec.in_channels) {
    throw ShapeError("conv: feature shape " + shape_to_string(feature.shape) +
                     " does not match CH_in=" +
                     std::to_string(spec.in_channels));
  }
  const Shape expected{spec.out_channels, spec.in_channels, spec.kernel_h,
                       spec.kernel_w};
  if (weight.shape != expected) {
    throw ShapeError("conv: weight shape " + shape_to_string(weight.shape) +
                     ", expected " + shape_to_string(expected));
  }
  if (feature.data.size() != shape_size(feature.shape) ||
      weight.data.size() != shape_size(weight.shape)) {
    throw ShapeError("conv: tensor data does not match its shape");
  }
}

void check_fc_shapes(const QTensor& feature, const QTensor& weight) {
  if (feature.shape.size() != 1 || weight.shape.size() != 2 ||
      weight.shape[1] != feature.shape[0]) {
    throw ShapeError("fc: feature " + shape_to_string(feature.shape) +
                     " incompatible with weight " +
                     shape_to_string(weight.shape));
  }
}

void check_shared_format(const QTensor& feature, const QTensor& weight) {
  if (feature.format != weight.format) {
    throw FormatMismatchError(
        "adder kernel needs a shared scaling factor: feature " +
        to_string(feature.format) + " vs weight " + to_string(weight.format));
  }
}

void check_acc_width(const AccTensor& acc) {
  for (auto v : acc.data) {
    if (!fits_signed(v, acc.acc_bits)) {
      throw WidthOverflowError("accumulator value " + std::to_string(v) +
                               " exceeds declared " +
                               std::to_string(acc.acc_bits) + " bits");
    }
  }
}

// Runs body(co) for every output channel, split into contiguous blocks.
template <typename Body>
void for_each_channel(std::size_t channels, unsigned threads, Body body) {
  threads = std::max(1u, std::min<unsigned>(threads, channels));
  if (threads == 1) {
    for (std::size_t co = 0; co < channels; ++co) body(co);
    return;
  }
  std::vector<std::jthread> pool;
  const std::size_t block = (channels + threads - 1) / threads;
  for (std::size_t begin = 0; begin < channels; begin += block) {
    const std::size_t end = std::min(channels, begin + block);
    pool.emplace_back([=] {
      for (std::size_t co = begin; co < end; ++co) body(co);
    });
  }
}

// Gathers the zero-padded receptive fields into rows of length
// H_out*W_out, one row per (ci, ky, kx).
std::vector<std::int32_t> gather_patches(const QTensor& feature,
                                         const ConvSpec& spec, std::size_t oh,
                                         std::size_t ow) {
  const std::size_t h = feature.shape[1], w = feature.shape[2];
  const std::size_t positions = oh * ow;
  std::vector<std::int32_t> cols(spec.terms_per_output() * positions, 0);
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < spec.in_channels; ++ci) {
    for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < spec.kernel_w; ++kx, ++row) {
        std::int32_t* dst = cols.data() + row * positions;
        for (std::size_t y = 0; y < oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * spec.stride_h + ky) -
                          static_cast<std::ptrdiff_t>(spec.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t x = 0; x < ow; ++x) {
            const auto ix =
                static_cast<std::ptrdiff_t>(x * spec.stride_w + kx) -
                static_cast<std::ptrdiff_t>(spec.pad_w);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            dst[y * ow + x] = feature.data[(ci * h + iy) * w + ix];
          }
        }
      }
    }
  }
  return cols;
}

template <KernelKind Kind>
AccTensor conv2d_impl(const QTensor& feature, const QTensor& weight,
                      const ConvSpec& spec, unsigned threads) {
  const std::size_t oh = spec.out_h(feature.shape[1]);
  const std::size_t ow = spec.out_w(feature.shape[2]);
  const std::size_t positions = oh * ow;
  const std::size_t rows = spec.terms_per_output();
  const auto cols = gather_patches(feature, spec, oh, ow);

  AccTensor out;
  out.shape = {spec.out_channels, oh, ow};
  out.data.assign(spec.out_channels * positions, 0);
  const int dw = std::max(feature.format.bits, weight.format.bits);
  if constexpr (Kind == KernelKind::adder) {
    out.acc_bits = adder_acc_bits(dw, rows);
    out.frac_bits = feature.format.frac_bits;
  } else {
    out.acc_bits = mult_acc_bits(dw, rows);
    out.frac_bits = feature.format.frac_bits + weight.format.frac_bits;
  }

  for_each_channel(spec.out_channels, threads, [&](std::size_t co) {
    std::int64_t* acc = out.data.data() + co * positions;
    const std::int32_t* wrow = weight.data.data() + co * rows;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::int64_t wv = wrow[r];
      const std::int32_t* src = cols.data() + r * positions;
      for (std::size_t p = 0; p < positions; ++p) {
        if constexpr (Kind == KernelKind::adder) {
          acc[p] -= std::abs(src[p] - wv);
        } else {
          acc[p] += src[p] * wv;
        }
      }
    }
  });
  check_acc_width(out);
  return out;
}

}  // namespace

AccTensor adder_conv2d(const QTensor& feature, const QTensor& weight,
                       const ConvSpec& spec, unsigned threads) {
  if (spec.kind != KernelKind::adder) {
    throw std::invalid_argument("adder_conv2d: spec.kind is not adder");
  }
  check_shared_format(feature, weight);
  check_conv_shapes(feature, weight, spec);
  return conv2d_impl<KernelKind::adder>(feature, weight, spec, threads);
}

AccTensor mult_conv2d(const QTensor& feature, const QTensor& weight,
                      const ConvSpec& spec, unsigned threads) {
  if (spec.kind != KernelKind::multiply) {
    throw std::invalid_argument("mult_conv2d: spec.kind is not multiply");
  }
  check_conv_shapes(feature, weight, spec);
  return conv2d_impl<KernelKind::multiply>(feature, weight, spec, threads);
}

AccTensor adder_fc(const QTensor& feature, const QTensor& weight) {
  check_shared_format(feature, weight);
  check_fc_shapes(feature, weight);
  const std::size_t m = weight.shape[0], n = weight.shape[1];
  AccTensor out;
  out.shape = {m};
  out.data.assign(m, 0);
  out.acc_bits = adder_acc_bits(feature.format.bits, n);
  out.frac_bits = feature.format.frac_bits;
  for (std::size_t i = 0; i < m; ++i) {
    std::int64_t acc = 0;
    const std::int32_t* wrow = weight.data.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      acc -= std::abs(static_cast<std::int64_t>(feature.data[j]) - wrow[j]);
    }
    out.data[i] = acc;
  }
  check_acc_width(out);
  return out;
}

AccTensor mult_fc(const QTensor& feature, const QTensor& weight) {
  check_fc_shapes(feature, weight);
  const std::size_t m = weight.shape[0], n = weight.shape[1];
  AccTensor out;
  out.shape = {m};
  out.data.assign(m, 0);
  out.acc_bits = mult_acc_bits(std::max(feature.format.bits, weight.format.bits), n);
  out.frac_bits = feature.format.frac_bits + weight.format.frac_bits;
  for (std::size_t i = 0; i < m; ++i) {
    std::int64_t acc = 0;
    const std::int32_t* wrow = weight.data.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      acc += static_cast<std::int64_t>(feature.data[j]) * wrow[j];
    }
    out.data[i] = acc;
  }
  check_acc_width(out);
  return out;
}

std::int64_t round_shift(std::int64_t v, int shift) {
  if (shift < 0) throw std::invalid_argument("round_shift: negative shift");
  if (shift == 0) return v;
  return (v + (std::int64_t{1} << (shift - 1))) >> shift;
}

std::int64_t div_round_half_up(std::int64_t num, std::int64_t den) {
  if (den <= 0) throw std::invalid_argument("div_round_half_up: den <= 0");
  // floor((2*num + den) / (2*den))
  const std::int64_t n = 2 * num + den, d = 2 * den;
  std::int64_t q = n / d;
  if ((n % d != 0) && (n < 0)) --q;
  return q;
}

AffineResult batchnorm_affine(const AccTensor& x,
                              std::span<const std::int64_t> mult,
                              std::span<const int> shift,
                              std::span<const std::int64_t> bias,
                              const QFormat& out_format) {
  out_format.validate();
  if (x.shape.empty()) throw ShapeError("batchnorm_affine: scalar input");
  const std::size_t channels = x.shape[0];
  if (mult.size() != channels || shift.size() != channels ||
      bias.size() != channels) {
    throw ShapeError("batchnorm_affine: parameter count != channel count " +
                     std::to_string(channels));
  }
  const std::size_t per_channel = x.data.size() / channels;
  const std::int64_t hi = out_format.max_code();
  AffineResult result;
  result.output.shape = x.shape;
  result.output.format = out_format;
  result.output.data.resize(x.data.size());
  for (std::size_t c = 0; c < channels; ++c) {
    if (shift[c] < 0) throw std::invalid_argument("batchnorm_affine: shift < 0");
    for (std::size_t i = 0; i < per_channel; ++i) {
      const std::size_t idx = c * per_channel + i;
      std::int64_t y = round_shift(x.data[idx] * mult[c], shift[c]) + bias[c];
      if (y > hi || y < -hi) {
        ++result.saturated;
        y = std::clamp(y, -hi, hi);
      }
      result.output.data[idx] = static_cast<std::int32_t>(y);
    }
  }
  return result;
}

}  // namespace adderkernel
