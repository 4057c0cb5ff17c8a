#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace adderkernel {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Power-of-two fixed-point format. A code q represents q * 2^-frac_bits and
// codes are symmetric: [-(2^(bits-1) - 1), 2^(bits-1) - 1].
struct QFormat {
  int bits = 8;
  int frac_bits = 0;

  static constexpr int kMinBits = 2;
  static constexpr int kMaxBits = 32;

  // Throws std::invalid_argument when bits is outside [2, 32].
  void validate() const;

  std::int64_t max_code() const { return (std::int64_t{1} << (bits - 1)) - 1; }
  std::int64_t min_code() const { return -max_code(); }
  double lsb() const;
  double clip_max() const;
  bool contains(std::int64_t code) const {
    return code >= min_code() && code <= max_code();
  }

  friend bool operator==(const QFormat&, const QFormat&) = default;
};

std::string to_string(const QFormat& q);

struct FloatTensor {
  Shape shape;
  std::vector<float> data;

  FloatTensor() = default;
  FloatTensor(Shape s, std::vector<float> d);
  explicit FloatTensor(Shape s);

  std::size_t size() const { return data.size(); }
  bool all_finite() const;
};

struct QTensor {
  Shape shape;
  std::vector<std::int32_t> data;
  QFormat format;

  QTensor() = default;
  QTensor(Shape s, std::vector<std::int32_t> d, QFormat q);

  std::size_t size() const { return data.size(); }
  // Every code inside the symmetric range and data.size() == shape product.
  bool valid() const;
};

struct CoverageReport {
  double fraction_in_clip = 0.0;
  double mse = 0.0;
};

// Result of the shared-format search. `degenerate` marks all-zero input,
// where the returned format (clip max just under 1.0) is a placeholder.
struct FormatChoice {
  QFormat format;
  bool degenerate = false;
  double total_squared_error = 0.0;
};

// Search window for frac_bits in the format search.
inline constexpr int kMinFracBits = -8;
inline constexpr int kMaxFracBits = 16;

// round(x * 2^f), ties away from zero, clamped to the symmetric range.
std::int32_t quantize_value(double x, const QFormat& q);
double dequantize_value(std::int64_t code, const QFormat& q);

QTensor quantize(const FloatTensor& t, const QFormat& q);
FloatTensor dequantize(const QTensor& t);

// Total squared error of quantize∘dequantize over `values`.
double quantization_error(std::span<const float> values, const QFormat& q);

// Minimum-squared-error format over one value set. Ties go to the smaller
// frac_bits (wider clip region).
FormatChoice choose_format(std::span<const float> values, int bits);

// One format for both tensors, minimising the error over their union.
FormatChoice choose_shared_format(const FloatTensor& features,
                                  const FloatTensor& weights, int bits);

CoverageReport coverage(const FloatTensor& t, const QFormat& q);

}  // namespace adderkernel
