#include "adderkernel/fixed_point.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "adderkernel/errors.hpp"

namespace adderkernel {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void QFormat::validate() const {
  if (bits < kMinBits || bits > kMaxBits) {
    throw std::invalid_argument("QFormat bits must be in [2, 32], got " +
                                std::to_string(bits));
  }
}

double QFormat::lsb() const { return std::ldexp(1.0, -frac_bits); }

double QFormat::clip_max() const {
  return std::ldexp(static_cast<double>(max_code()), -frac_bits);
}

std::string to_string(const QFormat& q) {
  return "Q(bits=" + std::to_string(q.bits) +
         ",frac=" + std::to_string(q.frac_bits) + ")";
}

FloatTensor::FloatTensor(Shape s, std::vector<float> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != shape_size(shape)) {
    throw ShapeError("FloatTensor: " + std::to_string(data.size()) +
                     " elements for shape " + shape_to_string(shape));
  }
}

FloatTensor::FloatTensor(Shape s)
    : shape(std::move(s)), data(shape_size(shape), 0.0f) {}

bool FloatTensor::all_finite() const {
  return std::all_of(data.begin(), data.end(),
                     [](float v) { return std::isfinite(v); });
}

QTensor::QTensor(Shape s, std::vector<std::int32_t> d, QFormat q)
    : shape(std::move(s)), data(std::move(d)), format(q) {
  if (data.size() != shape_size(shape)) {
    throw ShapeError("QTensor: " + std::to_string(data.size()) +
                     " elements for shape " + shape_to_string(shape));
  }
}

bool QTensor::valid() const {
  if (data.size() != shape_size(shape)) return false;
  return std::all_of(data.begin(), data.end(),
                     [this](std::int32_t v) { return format.contains(v); });
}

std::int32_t quantize_value(double x, const QFormat& q) {
  // std::round rounds halfway cases away from zero.
  const double scaled = std::round(std::ldexp(x, q.frac_bits));
  const double hi = static_cast<double>(q.max_code());
  return static_cast<std::int32_t>(std::clamp(scaled, -hi, hi));
}

double dequantize_value(std::int64_t code, const QFormat& q) {
  return std::ldexp(static_cast<double>(code), -q.frac_bits);
}

QTensor quantize(const FloatTensor& t, const QFormat& q) {
  q.validate();
  std::vector<std::int32_t> out(t.data.size());
  std::transform(t.data.begin(), t.data.end(), out.begin(),
                 [&q](float v) { return quantize_value(v, q); });
  return QTensor(t.shape, std::move(out), q);
}

FloatTensor dequantize(const QTensor& t) {
  std::vector<float> out(t.data.size());
  std::transform(t.data.begin(), t.data.end(), out.begin(), [&t](auto v) {
    return static_cast<float>(dequantize_value(v, t.format));
  });
  return FloatTensor(t.shape, std::move(out));
}

double quantization_error(std::span<const float> values, const QFormat& q) {
  double total = 0.0;
  for (float v : values) {
    const double err = dequantize_value(quantize_value(v, q), q) - v;
    total += err * err;
  }
  return total;
}

namespace {

FormatChoice search_format(std::span<const float> a, std::span<const float> b,
                           int bits) {
  QFormat probe{bits, 0};
  probe.validate();

  const auto nonzero = [](float v) { return v != 0.0f; };
  if (std::none_of(a.begin(), a.end(), nonzero) &&
      std::none_of(b.begin(), b.end(), nonzero)) {
    // Clip max (2^(b-1)-1) * 2^-(b-1) is just below 1.0.
    const int f = std::clamp(bits - 1, kMinFracBits, kMaxFracBits);
    return FormatChoice{QFormat{bits, f}, true, 0.0};
  }

  FormatChoice best{QFormat{bits, kMinFracBits}, false,
                    std::numeric_limits<double>::infinity()};
  for (int f = kMinFracBits; f <= kMaxFracBits; ++f) {
    const QFormat q{bits, f};
    const double err = quantization_error(a, q) + quantization_error(b, q);
    // Strict comparison keeps the smallest f among ties.
    if (err < best.total_squared_error) {
      best.format = q;
      best.total_squared_error = err;
    }
  }
  return best;
}

}  // namespace

FormatChoice choose_format(std::span<const float> values, int bits) {
  if (values.empty()) throw std::invalid_argument("choose_format: empty input");
  return search_format(values, {}, bits);
}

FormatChoice choose_shared_format(const FloatTensor& features,
                                  const FloatTensor& weights, int bits) {
  if (features.data.empty() || weights.data.empty()) {
    throw std::invalid_argument("choose_shared_format: empty tensor");
  }
  if (!features.all_finite() || !weights.all_finite()) {
    throw std::invalid_argument("choose_shared_format: non-finite input");
  }
  return search_format(features.data, weights.data, bits);
}

CoverageReport coverage(const FloatTensor& t, const QFormat& q) {
  if (t.data.empty()) throw std::invalid_argument("coverage: empty tensor");
  const double clip = q.clip_max();
  const auto inside = std::count_if(t.data.begin(), t.data.end(), [clip](float v) {
    return std::abs(static_cast<double>(v)) <= clip;
  });
  const auto n = static_cast<double>(t.data.size());
  return CoverageReport{static_cast<double>(inside) / n,
                        quantization_error(t.data, q) / n};
}

}  // namespace adderkernel
