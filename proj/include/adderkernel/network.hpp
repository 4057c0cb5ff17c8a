#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adderkernel/dataset.hpp"
#include "adderkernel/fixed_point.hpp"
#include "adderkernel/kernels.hpp"

namespace adderkernel {

enum class LayerKind : std::uint8_t { conv, fc, pool, relu, batchnorm, flatten };
enum class PoolMode : std::uint8_t { max, average };

std::string to_string(LayerKind k);

struct PoolSpec {
  std::size_t window = 2;
  std::size_t stride = 2;
  PoolMode mode = PoolMode::max;

  friend bool operator==(const PoolSpec&, const PoolSpec&) = default;
};

// conv and fc both use `conv`; an fc layer is a 1x1 kernel with
// in_channels = N inputs and out_channels = M outputs.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  ConvSpec conv{};
  PoolSpec pool{};
  std::size_t channels = 0;  // batchnorm

  static LayerSpec make_conv(std::size_t in, std::size_t out, std::size_t k,
                             std::size_t pad, KernelKind kind);
  static LayerSpec make_fc(std::size_t in, std::size_t out, KernelKind kind);
  static LayerSpec make_pool(std::size_t window, std::size_t stride,
                             PoolMode mode = PoolMode::max);
  static LayerSpec make_batchnorm(std::size_t channels);
  static LayerSpec make_relu();
  static LayerSpec make_flatten();

  bool has_kernel() const {
    return kind == LayerKind::conv || kind == LayerKind::fc;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
  Shape input_shape;
  KernelKind kernel_kind = KernelKind::adder;
  std::vector<LayerSpec> layers;

  // Output shape of every layer; throws ShapeError at the first layer whose
  // input does not fit.
  std::vector<Shape> infer_shapes() const;
  void validate() const { (void)infer_shapes(); }
  Shape output_shape() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// conv(1->6, 5x5, pad 2) -> bn -> relu -> maxpool -> conv(6->16, 5x5) -> bn
// -> relu -> maxpool -> flatten -> fc 400->120 -> bn -> relu -> fc 120->84
// -> bn -> relu -> fc 84->10 -> bn, on [1,28,28] input.
NetworkSpec build_lenet5(KernelKind kind);

// Indices of the conv/fc layers in execution order.
std::vector<std::size_t> kernel_layer_indices(const NetworkSpec& spec);

// Float parameters per layer: conv/fc {weight}, batchnorm {gamma, beta,
// running_mean, running_var}, nothing otherwise.
using LayerParams = std::vector<FloatTensor>;

inline constexpr float kBatchNormEps = 1e-5f;

struct QuantizedKernel {
  QFormat input_format;
  QTensor weight;  // weight.format == input_format for adder layers
};

// Integer affine that folds batch-norm, the kernel output scale and the
// requantization into the next layer's input format.
struct QuantizedBatchNorm {
  std::vector<std::int64_t> mult;
  std::vector<int> shift;
  std::vector<std::int64_t> bias;
  QFormat output_format;
};

struct QuantizedLayer {
  std::optional<QuantizedKernel> kernel;
  std::optional<QuantizedBatchNorm> batchnorm;

  friend bool operator==(const QuantizedLayer&, const QuantizedLayer&);
};

struct ModelBundle {
  NetworkSpec spec;
  std::vector<LayerParams> float_params;
  // 0 while the bundle holds only float parameters.
  int quant_bits = 0;
  std::vector<QuantizedLayer> quantized;

  bool is_quantized() const { return quant_bits > 0; }
  // Parameter shapes match `spec`; for adder bundles every kernel's weight
  // format equals its input format.
  void validate() const;

  friend bool operator==(const ModelBundle&, const ModelBundle&);
};

// Zero-initialised float parameters with the right shapes (BN gamma and
// running_var set to 1).
std::vector<LayerParams> make_default_params(const NetworkSpec& spec);

struct LayerStats {
  std::size_t layer = 0;
  std::string kind;
  std::int64_t min = 0;
  std::int64_t max = 0;
  std::size_t saturated = 0;
  int acc_bits = 0;  // conv/fc only
};

struct InferenceResult {
  std::vector<std::int64_t> scores;
  int predicted = 0;
  std::vector<LayerStats> stats;
};

class LayerFormatError : public FormatMismatchError {
 public:
  LayerFormatError(std::size_t layer, const std::string& what);
  std::size_t layer() const { return layer_; }

 private:
  std::size_t layer_;
};

// Lowest index among the maxima.
template <typename T>
int argmax(std::span<const T> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

// Input format for the first layer of a quantized bundle.
QFormat input_format(const ModelBundle& model);
QTensor quantize_input(const ModelBundle& model, std::span<const float> pixels);

// Integer inference for one input. Throws LayerFormatError naming the layer
// whose input format does not match.
InferenceResult forward(const ModelBundle& model, const QTensor& input,
                        unsigned threads = 1);

// Runs every input; `threads` splits the batch and never changes results.
std::vector<InferenceResult> forward_batch(const ModelBundle& model,
                                           std::span<const QTensor> inputs,
                                           unsigned threads = 1);

// Fraction of predictions equal to the label.
double top1_accuracy(std::span<const int> predictions,
                     std::span<const std::uint8_t> labels);

// Quantized top-1 accuracy over a dataset; throws on an empty dataset or
// labels outside 0..9.
double evaluate_accuracy(const ModelBundle& model, const Dataset& data,
                         unsigned threads = 1);

}  // namespace adderkernel
