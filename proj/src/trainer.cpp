#include "adderkernel/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "adderkernel/errors.hpp"

namespace adderkernel::train {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(lr0 > 0.0)) throw std::invalid_argument("TrainConfig: lr0 must be > 0");
  if (momentum < 0.0 || weight_decay < 0.0 || adder_lr_eta < 0.0) {
    throw std::invalid_argument("TrainConfig: negative momentum/decay/eta");
  }
}

CrossEntropy cross_entropy(std::span<const double> scores, int label) {
  if (scores.empty() || label < 0 || static_cast<std::size_t>(label) >= scores.size()) {
    throw std::invalid_argument("cross_entropy: label out of range");
  }
  const double m = *std::max_element(scores.begin(), scores.end());
  CrossEntropy ce;
  ce.grad.resize(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    ce.grad[i] = std::exp(scores[i] - m);
    z += ce.grad[i];
  }
  for (auto& g : ce.grad) g /= z;
  ce.loss = std::log(z) - (scores[static_cast<std::size_t>(label)] - m);
  ce.grad[static_cast<std::size_t>(label)] -= 1.0;
  return ce;
}

double cosine_lr(double lr0, int epoch, int total) {
  if (total <= 0) throw std::invalid_argument("cosine_lr: total must be > 0");
  return lr0 * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                         static_cast<double>(total)));
}

AdderGrads adder_layer_backward(const FloatTensor& feature,
                                const FloatTensor& weight,
                                const FloatTensor& upstream,
                                const ConvSpec& spec, FeatureGrad mode) {
  spec.validate();
  if (feature.shape.size() != 3 || feature.shape[0] != spec.in_channels) {
    throw ShapeError("adder_layer_backward: feature shape " +
                     shape_to_string(feature.shape));
  }
  const Shape wshape{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
  if (weight.shape != wshape) {
    throw ShapeError("adder_layer_backward: weight shape " + shape_to_string(weight.shape));
  }
  const std::size_t h = feature.shape[1], w = feature.shape[2];
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  const Shape oshape{spec.out_channels, oh, ow};
  if (upstream.shape != oshape) {
    throw ShapeError("adder_layer_backward: upstream shape " +
                     shape_to_string(upstream.shape) + ", expected " +
                     shape_to_string(oshape));
  }
  const std::size_t rows = spec.terms_per_output(), positions = oh * ow;
  std::vector<float> cols(rows * positions), gcols(rows * positions, 0.0f);
  im2col(feature.data.data(), h, w, spec, oh, ow, cols.data());
  AdderGrads g{FloatTensor(feature.shape), FloatTensor(weight.shape)};
  similarity_backward(KernelKind::adder, mode, cols.data(), rows, positions,
                      weight.data.data(), spec.out_channels, upstream.data.data(),
                      g.grad_weight.data.data(), gcols.data());
  col2im_add(gcols.data(), h, w, spec, oh, ow, g.grad_feature.data.data());
  return g;
}

std::vector<LayerParams> init_params(const NetworkSpec& spec, std::uint64_t seed) {
  auto params = make_default_params(spec);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (!l.has_kernel()) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.conv.terms_per_output()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : params[i][0].data) v = static_cast<float>(dist(rng));
  }
  return params;
}

SgdMomentum::SgdMomentum(const std::vector<LayerParams>& shape_like,
                         double momentum, double weight_decay)
    : velocity_(shape_like), momentum_(momentum), weight_decay_(weight_decay) {
  for (auto& layer : velocity_) {
    for (auto& t : layer) std::fill(t.data.begin(), t.data.end(), 0.0f);
  }
}

void SgdMomentum::step(std::vector<LayerParams>& params,
                       const std::vector<LayerParams>& grads, double lr) {
  const auto mu = static_cast<float>(momentum_);
  const auto wd = static_cast<float>(weight_decay_);
  const auto step = static_cast<float>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    // Batch-norm running statistics (tensors 2 and 3) are not trained.
    const std::size_t trainable = params[i].size() == 4 ? 2 : params[i].size();
    for (std::size_t t = 0; t < trainable; ++t) {
      auto& w = params[i][t].data;
      const auto& g = grads[i][t].data;
      auto& v = velocity_[i][t].data;
      for (std::size_t k = 0; k < w.size(); ++k) {
        v[k] = mu * v[k] + g[k] + wd * w[k];
        w[k] -= step * v[k];
      }
    }
  }
}

namespace {

void check_finite(const std::vector<LayerParams>& params, int epoch) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (const auto& t : params[i]) {
      if (!t.all_finite()) {
        throw NumericError("training diverged: non-finite parameter in layer " +
                           std::to_string(i) + " during epoch " + std::to_string(epoch));
      }
    }
  }
}

void rescale_adder_grads(const NetworkSpec& spec, std::vector<LayerParams>& grads,
                         double eta) {
  for (std::size_t i : kernel_layer_indices(spec)) {
    auto& g = grads[i][0].data;
    double norm = 0.0;
    for (float v : g) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    const auto scale = static_cast<float>(
        eta * std::sqrt(static_cast<double>(g.size())) / norm);
    for (auto& v : g) v *= scale;
  }
}

}  // namespace

TrainResult train(const NetworkSpec& spec, const Dataset& train_data,
                  const Dataset* test, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  spec.validate();
  if (train_data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (train_data.sample_shape != spec.input_shape) {
    throw ShapeError("train: dataset sample shape " +
                     shape_to_string(train_data.sample_shape) + " != network input " +
                     shape_to_string(spec.input_shape));
  }
  const std::size_t classes = shape_size(spec.output_shape());
  for (auto label : train_data.labels) {
    if (label >= classes) throw std::invalid_argument("train: label out of range");
  }

  TrainResult result;
  result.model.spec = spec;
  result.model.float_params = init_params(spec, cfg.seed);
  auto& params = result.model.float_params;
  FloatEngine engine(spec, params, cfg.feature_grad);
  SgdMomentum opt(params, cfg.momentum, cfg.weight_decay);

  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.lr0, epoch, cfg.epochs);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Batch batch = make_batch(train_data, idx);
      engine.zero_grad();
      const Batch& out = engine.forward(batch, true);

      Batch grad;
      grad.n = out.n;
      grad.sample_shape = out.sample_shape;
      grad.data.resize(out.data.size());
      const double inv_n = 1.0 / static_cast<double>(out.n);
      std::vector<double> scores(classes);
      for (std::size_t s = 0; s < out.n; ++s) {
        std::copy_n(out.data.begin() + static_cast<std::ptrdiff_t>(s * classes), classes,
                    scores.begin());
        const int label = train_data.labels[idx[s]];
        const auto ce = cross_entropy(scores, label);
        if (!std::isfinite(ce.loss)) {
          std::ostringstream os;
          os << "training diverged: loss " << ce.loss << " at epoch " << epoch
             << ", batch starting at " << begin << ", lr " << lr;
          throw NumericError(os.str());
        }
        loss_sum += ce.loss;
        correct += argmax<double>(scores) == label;
        for (std::size_t k = 0; k < classes; ++k) {
          grad.data[s * classes + k] = static_cast<float>(ce.grad[k] * inv_n);
        }
      }
      engine.backward(grad);
      if (cfg.adder_lr_eta > 0.0 && spec.kernel_kind == KernelKind::adder) {
        rescale_adder_grads(spec, engine.grads(), cfg.adder_lr_eta);
      }
      opt.step(params, engine.grads(), lr);
    }
    check_finite(params, epoch);

    EpochStats st;
    st.epoch = epoch + 1;
    st.lr = lr;
    st.train_loss = loss_sum / static_cast<double>(train_data.size());
    st.train_acc = static_cast<double>(correct) / static_cast<double>(train_data.size());
    st.test_acc = test ? float_accuracy(result.model, *test)
                       : std::numeric_limits<double>::quiet_NaN();
    result.curve.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return result;
}

std::vector<int> float_predict(const ModelBundle& model, const Dataset& data,
                               std::size_t batch) {
  auto params = model.float_params;
  FloatEngine engine(model.spec, params);
  const std::size_t classes = shape_size(model.spec.output_shape());
  std::vector<int> predictions;
  predictions.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += batch) {
    const std::size_t end = std::min(data.size(), begin + batch);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Batch& out = engine.forward(make_batch(data, idx), false);
    for (std::size_t s = 0; s < out.n; ++s) {
      predictions.push_back(argmax<float>(
          std::span<const float>(out.data.data() + s * classes, classes)));
    }
  }
  return predictions;
}

double float_accuracy(const ModelBundle& model, const Dataset& data) {
  const auto predictions = float_predict(model, data);
  return top1_accuracy(predictions, data.labels);
}

void write_curve_csv(std::ostream& os, const std::vector<EpochStats>& curve) {
  os << "epoch,train_loss,train_acc,test_acc\n";
  for (const auto& s : curve) {
    char line[128];
    std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%.6f\n", s.epoch, s.train_loss,
                  s.train_acc, s.test_acc);
    os << line;
  }
}

}  // namespace adderkernel::train
