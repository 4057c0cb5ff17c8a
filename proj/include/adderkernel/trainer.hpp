#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "adderkernel/dataset.hpp"
#include "adderkernel/float_engine.hpp"
#include "adderkernel/network.hpp"

namespace adderkernel::train {

struct TrainConfig {
  int epochs = 10;
  std::size_t batch_size = 64;
  double lr0 = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
  FeatureGrad feature_grad = FeatureGrad::hardtanh;
  // Layer-wise gradient rescaling for adder kernels,
  // eta * sqrt(numel) / ||grad||; 0 disables it.
  double adder_lr_eta = 0.2;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;  // NaN without a test set
};

struct TrainResult {
  ModelBundle model;
  std::vector<EpochStats> curve;
};

struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> grad;  // softmax - one_hot
};

// Softmax cross-entropy with max subtraction.
CrossEntropy cross_entropy(std::span<const double> scores, int label);

// lr0 * 0.5 * (1 + cos(pi * epoch / total)).
double cosine_lr(double lr0, int epoch, int total);

struct AdderGrads {
  FloatTensor grad_feature;
  FloatTensor grad_weight;
};

// Surrogate gradients of one adder conv layer for a single [CH_in,H,W]
// sample: grad_weight accumulates upstream * (F - W) and grad_feature
// accumulates upstream * HardTanh(W - F) (or sign(W - F)) over every
// receptive-field position.
AdderGrads adder_layer_backward(const FloatTensor& feature,
                                const FloatTensor& weight,
                                const FloatTensor& upstream,
                                const ConvSpec& spec,
                                FeatureGrad mode = FeatureGrad::hardtanh);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) kernels, identity batch-norm.
std::vector<LayerParams> init_params(const NetworkSpec& spec, std::uint64_t seed);

// One SGD-with-momentum step: v = mu*v + g + wd*w; w -= lr*v.
class SgdMomentum {
 public:
  SgdMomentum(const std::vector<LayerParams>& shape_like, double momentum,
              double weight_decay);
  void step(std::vector<LayerParams>& params, const std::vector<LayerParams>& grads,
            double lr);

 private:
  std::vector<LayerParams> velocity_;
  double momentum_;
  double weight_decay_;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Deterministic for a given seed. Throws NumericError when the loss or a
// parameter becomes non-finite. `test` may be null.
TrainResult train(const NetworkSpec& spec, const Dataset& train_data,
                  const Dataset* test, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Float (eval-mode batch-norm) predictions for every sample.
std::vector<int> float_predict(const ModelBundle& model, const Dataset& data,
                               std::size_t batch = 256);
double float_accuracy(const ModelBundle& model, const Dataset& data);

// "epoch,train_loss,train_acc,test_acc" plus one row per epoch.
void write_curve_csv(std::ostream& os, const std::vector<EpochStats>& curve);

}  // namespace adderkernel::train
