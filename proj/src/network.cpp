#include "adderkernel/network.hpp"

#include <algorithm>
#include <bit>
#include <exception>
#include <optional>
#include <limits>
#include <stdexcept>
#include <thread>
#include <variant>

#include "adderkernel/errors.hpp"

namespace adderkernel {

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::fc: return "fc";
    case LayerKind::pool: return "pool";
    case LayerKind::relu: return "relu";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

LayerSpec LayerSpec::make_conv(std::size_t in, std::size_t out, std::size_t k,
                               std::size_t pad, KernelKind kind) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.conv = ConvSpec{k, k, in, out, 1, 1, pad, pad, kind};
  return l;
}

LayerSpec LayerSpec::make_fc(std::size_t in, std::size_t out, KernelKind kind) {
  LayerSpec l;
  l.kind = LayerKind::fc;
  l.conv = ConvSpec{1, 1, in, out, 1, 1, 0, 0, kind};
  return l;
}

LayerSpec LayerSpec::make_pool(std::size_t window, std::size_t stride,
                               PoolMode mode) {
  LayerSpec l;
  l.kind = LayerKind::pool;
  l.pool = PoolSpec{window, stride, mode};
  return l;
}

LayerSpec LayerSpec::make_batchnorm(std::size_t channels) {
  LayerSpec l;
  l.kind = LayerKind::batchnorm;
  l.channels = channels;
  return l;
}

LayerSpec LayerSpec::make_relu() { return LayerSpec{}; }

LayerSpec LayerSpec::make_flatten() {
  LayerSpec l;
  l.kind = LayerKind::flatten;
  return l;
}

std::vector<Shape> NetworkSpec::infer_shapes() const {
  std::vector<Shape> shapes;
  shapes.reserve(layers.size());
  Shape cur = input_shape;
  if (cur.empty() || shape_size(cur) == 0) {
    throw ShapeError("network: empty input shape");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const auto fail = [&](const std::string& why) {
      throw ShapeError("layer " + std::to_string(i) + " (" + to_string(l.kind) +
                       "): " + why + ", input " + shape_to_string(cur));
    };
    switch (l.kind) {
      case LayerKind::conv:
        l.conv.validate();
        if (l.conv.kind != kernel_kind) fail("kernel kind differs from network");
        if (cur.size() != 3 || cur[0] != l.conv.in_channels) fail("channel mismatch");
        if (cur[1] + 2 * l.conv.pad_h < l.conv.kernel_h ||
            cur[2] + 2 * l.conv.pad_w < l.conv.kernel_w) {
          fail("kernel larger than padded input");
        }
        cur = {l.conv.out_channels, l.conv.out_h(cur[1]), l.conv.out_w(cur[2])};
        break;
      case LayerKind::fc:
        l.conv.validate();
        if (l.conv.kind != kernel_kind) fail("kernel kind differs from network");
        if (cur.size() != 1 || cur[0] != l.conv.in_channels) fail("fc expects flat input");
        cur = {l.conv.out_channels};
        break;
      case LayerKind::pool:
        if (cur.size() != 3) fail("pool expects [C,H,W]");
        if (l.pool.window == 0 || l.pool.stride == 0 ||
            l.pool.window > cur[1] || l.pool.window > cur[2]) {
          fail("bad pool window");
        }
        cur = {cur[0], (cur[1] - l.pool.window) / l.pool.stride + 1,
               (cur[2] - l.pool.window) / l.pool.stride + 1};
        break;
      case LayerKind::batchnorm:
        if (l.channels != cur[0]) fail("batchnorm channel count mismatch");
        break;
      case LayerKind::relu:
        break;
      case LayerKind::flatten:
        cur = {shape_size(cur)};
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

Shape NetworkSpec::output_shape() const {
  const auto shapes = infer_shapes();
  return shapes.empty() ? input_shape : shapes.back();
}

NetworkSpec build_lenet5(KernelKind kind) {
  NetworkSpec net;
  net.input_shape = {1, 28, 28};
  net.kernel_kind = kind;
  auto& l = net.layers;
  l.push_back(LayerSpec::make_conv(1, 6, 5, 2, kind));
  l.push_back(LayerSpec::make_batchnorm(6));
  l.push_back(LayerSpec::make_relu());
  l.push_back(LayerSpec::make_pool(2, 2));
  l.push_back(LayerSpec::make_conv(6, 16, 5, 0, kind));
  l.push_back(LayerSpec::make_batchnorm(16));
  l.push_back(LayerSpec::make_relu());
  l.push_back(LayerSpec::make_pool(2, 2));
  l.push_back(LayerSpec::make_flatten());
  l.push_back(LayerSpec::make_fc(400, 120, kind));
  l.push_back(LayerSpec::make_batchnorm(120));
  l.push_back(LayerSpec::make_relu());
  l.push_back(LayerSpec::make_fc(120, 84, kind));
  l.push_back(LayerSpec::make_batchnorm(84));
  l.push_back(LayerSpec::make_relu());
  l.push_back(LayerSpec::make_fc(84, 10, kind));
  l.push_back(LayerSpec::make_batchnorm(10));
  net.validate();
  return net;
}

std::vector<std::size_t> kernel_layer_indices(const NetworkSpec& spec) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].has_kernel()) idx.push_back(i);
  }
  return idx;
}

namespace {

Shape weight_shape(const LayerSpec& l) {
  if (l.kind == LayerKind::fc) return {l.conv.out_channels, l.conv.in_channels};
  return {l.conv.out_channels, l.conv.in_channels, l.conv.kernel_h,
          l.conv.kernel_w};
}

}  // namespace

std::vector<LayerParams> make_default_params(const NetworkSpec& spec) {
  std::vector<LayerParams> params(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.has_kernel()) {
      params[i].emplace_back(weight_shape(l));
    } else if (l.kind == LayerKind::batchnorm) {
      const Shape s{l.channels};
      params[i] = {FloatTensor(s, std::vector<float>(l.channels, 1.0f)),
                   FloatTensor(s), FloatTensor(s),
                   FloatTensor(s, std::vector<float>(l.channels, 1.0f))};
    }
  }
  return params;
}

bool operator==(const QuantizedLayer& a, const QuantizedLayer& b) {
  const auto kernel_eq = [](const QuantizedKernel& x, const QuantizedKernel& y) {
    return x.input_format == y.input_format && x.weight.shape == y.weight.shape &&
           x.weight.data == y.weight.data && x.weight.format == y.weight.format;
  };
  const auto bn_eq = [](const QuantizedBatchNorm& x, const QuantizedBatchNorm& y) {
    return x.mult == y.mult && x.shift == y.shift && x.bias == y.bias &&
           x.output_format == y.output_format;
  };
  if (a.kernel.has_value() != b.kernel.has_value()) return false;
  if (a.batchnorm.has_value() != b.batchnorm.has_value()) return false;
  if (a.kernel && !kernel_eq(*a.kernel, *b.kernel)) return false;
  if (a.batchnorm && !bn_eq(*a.batchnorm, *b.batchnorm)) return false;
  return true;
}

bool operator==(const ModelBundle& a, const ModelBundle& b) {
  if (!(a.spec == b.spec) || a.quant_bits != b.quant_bits ||
      a.quantized != b.quantized || a.float_params.size() != b.float_params.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.float_params.size(); ++i) {
    const auto& x = a.float_params[i];
    const auto& y = b.float_params[i];
    if (x.size() != y.size()) return false;
    for (std::size_t t = 0; t < x.size(); ++t) {
      // Bitwise comparison; NaN payloads would otherwise compare unequal.
      if (x[t].shape != y[t].shape || x[t].data.size() != y[t].data.size() ||
          !std::equal(x[t].data.begin(), x[t].data.end(), y[t].data.begin(),
                      [](float p, float q) {
                        return std::bit_cast<std::uint32_t>(p) ==
                               std::bit_cast<std::uint32_t>(q);
                      })) {
        return false;
      }
    }
  }
  return true;
}

void ModelBundle::validate() const {
  spec.validate();
  if (float_params.size() != spec.layers.size()) {
    throw ShapeError("model: float parameter table has " +
                     std::to_string(float_params.size()) + " layers, spec has " +
                     std::to_string(spec.layers.size()));
  }
  const auto expected = make_default_params(spec);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (float_params[i].size() != expected[i].size()) {
      throw ShapeError("model: layer " + std::to_string(i) +
                       " has the wrong number of parameter tensors");
    }
    for (std::size_t t = 0; t < expected[i].size(); ++t) {
      if (float_params[i][t].shape != expected[i][t].shape ||
          float_params[i][t].data.size() != expected[i][t].data.size()) {
        throw ShapeError("model: layer " + std::to_string(i) + " tensor " +
                         std::to_string(t) + " has shape " +
                         shape_to_string(float_params[i][t].shape));
      }
    }
  }
  if (!is_quantized()) return;
  if (quantized.size() != spec.layers.size()) {
    throw ShapeError("model: quantized table size mismatch");
  }
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const QuantizedLayer& q = quantized[i];
    if (l.has_kernel()) {
      if (!q.kernel) throw ShapeError("model: layer " + std::to_string(i) + " not quantized");
      if (q.kernel->weight.shape != expected[i][0].shape || !q.kernel->weight.valid()) {
        throw ShapeError("model: layer " + std::to_string(i) + " bad quantized weight");
      }
      if (spec.kernel_kind == KernelKind::adder &&
          q.kernel->weight.format != q.kernel->input_format) {
        throw LayerFormatError(i, "adder layer weight and feature formats differ");
      }
    }
    if (l.kind == LayerKind::batchnorm) {
      if (!q.batchnorm || q.batchnorm->mult.size() != l.channels ||
          q.batchnorm->shift.size() != l.channels ||
          q.batchnorm->bias.size() != l.channels) {
        throw ShapeError("model: layer " + std::to_string(i) + " bad integer batch-norm");
      }
    }
  }
  // Every requantizing batch-norm feeds the next kernel in its input format.
  std::optional<QFormat> pending;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].has_kernel()) {
      if (pending && *pending != quantized[i].kernel->input_format) {
        throw LayerFormatError(i, "input format differs from the preceding "
                                  "batch-norm output format");
      }
      pending.reset();
    } else if (spec.layers[i].kind == LayerKind::batchnorm) {
      pending = quantized[i].batchnorm->output_format;
    }
  }
}

LayerFormatError::LayerFormatError(std::size_t layer, const std::string& what)
    : FormatMismatchError("layer " + std::to_string(layer) + ": " + what),
      layer_(layer) {}

QFormat input_format(const ModelBundle& model) {
  const auto idx = kernel_layer_indices(model.spec);
  if (!model.is_quantized() || idx.empty()) {
    throw std::invalid_argument("model is not quantized");
  }
  return model.quantized[idx.front()].kernel->input_format;
}

QTensor quantize_input(const ModelBundle& model, std::span<const float> pixels) {
  FloatTensor t(model.spec.input_shape,
                std::vector<float>(pixels.begin(), pixels.end()));
  return quantize(t, input_format(model));
}

namespace {

template <typename Vec>
LayerStats make_stats(std::size_t layer, LayerKind kind, const Vec& data) {
  LayerStats s;
  s.layer = layer;
  s.kind = to_string(kind);
  if (!data.empty()) {
    const auto [lo, hi] = std::minmax_element(data.begin(), data.end());
    s.min = *lo;
    s.max = *hi;
  }
  return s;
}

}  // namespace

InferenceResult forward(const ModelBundle& model, const QTensor& input,
                        unsigned threads) {
  if (!model.is_quantized()) throw std::invalid_argument("forward: model is not quantized");
  if (input.shape != model.spec.input_shape) {
    throw ShapeError("forward: input shape " + shape_to_string(input.shape) +
                     " != " + shape_to_string(model.spec.input_shape));
  }
  InferenceResult result;
  QTensor cur = input;
  std::optional<AccTensor> acc;
  const auto require_q = [&](std::size_t i) {
    if (acc) {
      throw std::logic_error("forward: layer " + std::to_string(i) +
                             " follows a kernel without batch-norm");
    }
  };

  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const LayerSpec& l = model.spec.layers[i];
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::fc: {
        require_q(i);
        const QuantizedKernel& qk = *model.quantized[i].kernel;
        if (cur.format != qk.input_format) {
          throw LayerFormatError(i, "input " + to_string(cur.format) +
                                        " but layer expects " +
                                        to_string(qk.input_format));
        }
        const bool adder = model.spec.kernel_kind == KernelKind::adder;
        if (l.kind == LayerKind::conv) {
          acc = adder ? adder_conv2d(cur, qk.weight, l.conv, threads)
                      : mult_conv2d(cur, qk.weight, l.conv, threads);
        } else {
          acc = adder ? adder_fc(cur, qk.weight) : mult_fc(cur, qk.weight);
        }
        auto s = make_stats(i, l.kind, acc->data);
        s.acc_bits = acc->acc_bits;
        result.stats.push_back(s);
        break;
      }
      case LayerKind::batchnorm: {
        if (!acc) {
          throw std::logic_error("forward: batch-norm at layer " +
                                 std::to_string(i) + " has no kernel input");
        }
        const QuantizedBatchNorm& bn = *model.quantized[i].batchnorm;
        auto r = batchnorm_affine(*acc, bn.mult, bn.shift, bn.bias, bn.output_format);
        acc.reset();
        cur = std::move(r.output);
        auto s = make_stats(i, l.kind, cur.data);
        s.saturated = r.saturated;
        result.stats.push_back(s);
        break;
      }
      case LayerKind::relu:
        require_q(i);
        cur = relu(std::move(cur));
        result.stats.push_back(make_stats(i, l.kind, cur.data));
        break;
      case LayerKind::pool:
        require_q(i);
        cur = l.pool.mode == PoolMode::max
                  ? maxpool2d(cur, l.pool.window, l.pool.stride)
                  : avgpool2d(cur, l.pool.window, l.pool.stride);
        result.stats.push_back(make_stats(i, l.kind, cur.data));
        break;
      case LayerKind::flatten:
        require_q(i);
        cur.shape = {cur.data.size()};
        result.stats.push_back(make_stats(i, l.kind, cur.data));
        break;
    }
  }
  if (acc) {
    result.scores = acc->data;
  } else {
    result.scores.assign(cur.data.begin(), cur.data.end());
  }
  result.predicted = argmax<std::int64_t>(result.scores);
  return result;
}

std::vector<InferenceResult> forward_batch(const ModelBundle& model,
                                           std::span<const QTensor> inputs,
                                           unsigned threads) {
  std::vector<InferenceResult> out(inputs.size());
  threads = std::max(1u, std::min<unsigned>(threads, inputs.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < inputs.size(); ++i) out[i] = forward(model, inputs[i]);
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    const std::size_t block = (inputs.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = t * block;
      const std::size_t end = std::min(inputs.size(), begin + block);
      pool.emplace_back([&, t, begin, end] {
        try {
          for (std::size_t i = begin; i < end; ++i) out[i] = forward(model, inputs[i]);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

double top1_accuracy(std::span<const int> predictions,
                     std::span<const std::uint8_t> labels) {
  if (labels.empty()) throw std::invalid_argument("accuracy: empty dataset");
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("accuracy: prediction/label count mismatch");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    hits += predictions[i] == static_cast<int>(labels[i]);
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double evaluate_accuracy(const ModelBundle& model, const Dataset& data,
                         unsigned threads) {
  if (data.size() == 0) throw std::invalid_argument("evaluate_accuracy: empty dataset");
  if (std::any_of(data.labels.begin(), data.labels.end(),
                  [](std::uint8_t l) { return l > 9; })) {
    throw std::invalid_argument("evaluate_accuracy: label outside 0..9");
  }
  std::vector<QTensor> inputs;
  inputs.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    inputs.push_back(quantize_input(model, data.image(i)));
  }
  const auto results = forward_batch(model, inputs, threads);
  std::vector<int> predictions(results.size());
  std::transform(results.begin(), results.end(), predictions.begin(),
                 [](const InferenceResult& r) { return r.predicted; });
  return top1_accuracy(predictions, data.labels);
}

Dataset Dataset::head(std::size_t n) const {
  n = std::min(n, size());
  Dataset d;
  d.sample_shape = sample_shape;
  d.images.assign(images.begin(),
                  images.begin() + static_cast<std::ptrdiff_t>(n * sample_size()));
  d.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  return d;
}

}  // namespace adderkernel
