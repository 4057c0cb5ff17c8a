#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "adderkernel/fixed_point.hpp"
#include "adderkernel/kernels.hpp"
#include "adderkernel/network.hpp"

namespace adderkernel::train {

// Feature gradient of an adder layer.
//  hardtanh: upstream * HardTanh(W - F), the full-precision surrogate.
//  sign:     upstream * sign(W - F), the true subgradient of -|F - W|.
enum class FeatureGrad { hardtanh, sign };

// n samples of `sample_shape`, stored contiguously.
struct Batch {
  std::size_t n = 0;
  Shape sample_shape;
  std::vector<float> data;

  std::size_t sample_size() const { return shape_size(sample_shape); }
};

// Similarity "matrix product" shared by conv (after patch gathering) and fc:
//   out[co][p] = sum_r S(cols[r][p], w[co][r])
// with S = -|x - w| (adder) or x * w (multiply).
void similarity_forward(KernelKind kind, const float* cols, std::size_t rows,
                        std::size_t positions, const float* weight,
                        std::size_t out_channels, float* out);

// Accumulates into grad_weight [out_channels x rows] and grad_cols
// [rows x positions]. Adder weights receive upstream * (x - w).
void similarity_backward(KernelKind kind, FeatureGrad feature_grad,
                         const float* cols, std::size_t rows,
                         std::size_t positions, const float* weight,
                         std::size_t out_channels, const float* grad_out,
                         float* grad_weight, float* grad_cols);

// Patch gathering for one [C,H,W] sample (zero padding) and its adjoint.
void im2col(const float* in, std::size_t h, std::size_t w, const ConvSpec& spec,
            std::size_t oh, std::size_t ow, float* cols);
void col2im_add(const float* cols, std::size_t h, std::size_t w,
                const ConvSpec& spec, std::size_t oh, std::size_t ow, float* out);

// Called with (layer index, batch entering that layer) for conv/fc layers.
using KernelInputObserver = std::function<void(std::size_t, const Batch&)>;

// Float execution of a NetworkSpec over a parameter table it does not own.
// Training mode uses batch statistics in batch-norm, updates the running
// statistics and caches what backward() needs.
class FloatEngine {
 public:
  FloatEngine(const NetworkSpec& spec, std::vector<LayerParams>& params,
              FeatureGrad feature_grad = FeatureGrad::hardtanh);

  const Batch& forward(const Batch& input, bool training,
                       const KernelInputObserver& observer = {});
  // Gradient w.r.t. the last forward output; accumulates into grads().
  void backward(const Batch& grad_output);

  void zero_grad();
  std::vector<LayerParams>& grads() { return grads_; }
  std::vector<LayerParams>& params() { return params_; }
  const NetworkSpec& spec() const { return spec_; }

  float bn_momentum = 0.1f;

 private:
  struct Cache {
    Batch input;
    std::vector<float> cols;        // conv/fc patches, n * rows * positions
    std::vector<float> xhat;        // batch-norm
    std::vector<float> inv_std;     // batch-norm, per channel
    std::vector<std::size_t> arg;   // max-pool winners
  };

  Batch forward_kernel(std::size_t i, const Batch& in, bool training);
  Batch forward_batchnorm(std::size_t i, const Batch& in, bool training);
  Batch forward_pool(std::size_t i, const Batch& in, bool training);
  Batch backward_kernel(std::size_t i, const Batch& grad);
  Batch backward_batchnorm(std::size_t i, const Batch& grad);
  Batch backward_pool(std::size_t i, const Batch& grad);

  NetworkSpec spec_;
  std::vector<Shape> shapes_;
  std::vector<LayerParams>& params_;
  std::vector<LayerParams> grads_;
  FeatureGrad feature_grad_;
  std::vector<Cache> cache_;
  Batch output_;
};

// Packs the listed samples, in order, into one batch.
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace adderkernel::train
