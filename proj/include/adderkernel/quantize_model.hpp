#pragma once

#include <cstddef>
#include <vector>

#include "adderkernel/dataset.hpp"
#include "adderkernel/fixed_point.hpp"
#include "adderkernel/network.hpp"

namespace adderkernel {

inline constexpr int kMinModelBits = 4;
inline constexpr int kMaxModelBits = 16;
// Width of the final scores. They feed no further kernel, so they are not
// tied to a shared format.
inline constexpr int kScoreBits = 16;
inline constexpr std::size_t kDefaultCalibrationSamples = 1024;

struct LayerQuantReport {
  std::size_t layer = 0;
  QFormat input_format;
  QFormat weight_format;
  CoverageReport feature_coverage;
  CoverageReport weight_coverage;
  bool degenerate = false;
};

struct QuantizeResult {
  ModelBundle model;
  std::vector<LayerQuantReport> layers;
};

// Post-training quantization. Kernel input activations are recorded over
// `calibration` with the float network. Adder layers get one shared format
// chosen over activations and weights together; weights beyond the
// activation range are clamped for the search, and whatever the format
// clips is compensated exactly in the following batch-norm bias. Multiply
// layers get separate feature and weight formats. Each batch-norm is folded
// into an integer (mult, shift, bias) that also requantizes into the next
// layer's input format. Throws std::invalid_argument for bits outside [4, 16].
QuantizeResult quantize_model(const ModelBundle& float_model,
                              const Dataset& calibration, int bits);

// Integer form of y = a*x + b applied to an accumulator with scale exponent
// `acc_frac_bits`, producing codes with `out_frac_bits`.
struct FoldedAffine {
  std::int64_t mult = 0;
  int shift = 0;
  std::int64_t bias = 0;
};
FoldedAffine fold_affine(double a, double b, int acc_frac_bits, int out_frac_bits);

}  // namespace adderkernel
