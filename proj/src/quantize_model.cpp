#include "adderkernel/quantize_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "adderkernel/float_engine.hpp"

namespace adderkernel {

namespace {

constexpr int kMultBits = 24;
constexpr int kMaxShift = 40;

}  // namespace

FoldedAffine fold_affine(double a, double b, int acc_frac_bits, int out_frac_bits) {
  const double m_real = std::ldexp(a, out_frac_bits - acc_frac_bits);
  const double limit = std::ldexp(1.0, kMultBits);
  FoldedAffine f;
  for (int s = kMaxShift; s >= 0; --s) {
    if (std::abs(std::round(std::ldexp(m_real, s))) < limit || s == 0) {
      f.shift = s;
      f.mult = static_cast<std::int64_t>(std::round(std::ldexp(m_real, s)));
      break;
    }
  }
  f.bias = static_cast<std::int64_t>(std::round(std::ldexp(b, out_frac_bits)));
  return f;
}

QuantizeResult quantize_model(const ModelBundle& float_model,
                              const Dataset& calibration, int bits) {
  if (bits < kMinModelBits || bits > kMaxModelBits) {
    throw std::invalid_argument("quantization bits must be in [4, 16], got " +
                                std::to_string(bits));
  }
  if (calibration.size() == 0) {
    throw std::invalid_argument("quantize_model: empty calibration set");
  }
  float_model.validate();
  const NetworkSpec& spec = float_model.spec;
  const bool adder = spec.kernel_kind == KernelKind::adder;

  // Record what enters every kernel layer, and the final outputs.
  std::vector<std::vector<float>> acts(spec.layers.size());
  std::vector<float> scores;
  {
    auto params = float_model.float_params;
    train::FloatEngine engine(spec, params);
    std::vector<std::size_t> idx;
    constexpr std::size_t kBatch = 256;
    for (std::size_t begin = 0; begin < calibration.size(); begin += kBatch) {
      const std::size_t end = std::min(calibration.size(), begin + kBatch);
      idx.resize(end - begin);
      std::iota(idx.begin(), idx.end(), begin);
      const auto& out = engine.forward(
          train::make_batch(calibration, idx), false,
          [&acts](std::size_t layer, const train::Batch& in) {
            acts[layer].insert(acts[layer].end(), in.data.begin(), in.data.end());
          });
      scores.insert(scores.end(), out.data.begin(), out.data.end());
    }
  }

  QuantizeResult result;
  ModelBundle& m = result.model;
  m.spec = spec;
  m.float_params = float_model.float_params;
  m.quant_bits = bits;
  m.quantized.resize(spec.layers.size());

  // Per output channel constant removed from adder outputs by weight
  // clipping; moved into the following batch-norm bias.
  std::vector<std::vector<double>> offsets(spec.layers.size());

  for (std::size_t i : kernel_layer_indices(spec)) {
    const FloatTensor& w = float_model.float_params[i][0];
    const std::size_t n = acts[i].size();
    const FloatTensor features(Shape{n}, std::move(acts[i]));
    LayerQuantReport rep;
    rep.layer = i;
    if (adder) {
      const bool foldable =
          i + 1 < spec.layers.size() && spec.layers[i + 1].kind == LayerKind::batchnorm;
      // For |f| <= c <= |w|: -|f - w| = -|f - sign(w) c| - (|w| - c). Weights
      // past the feature range therefore only shift the output, and the
      // search sees them clamped to that range.
      FloatTensor searched = w;
      if (foldable) {
        float fmax = 0.0f;
        for (float v : features.data) fmax = std::max(fmax, std::abs(v));
        if (fmax > 0.0f) {
          for (auto& v : searched.data) v = std::clamp(v, -fmax, fmax);
        }
      }
      const FormatChoice c = choose_shared_format(features, searched, bits);
      rep.input_format = rep.weight_format = c.format;
      rep.degenerate = c.degenerate;
      if (foldable) {
        const double clip = c.format.clip_max();
        const std::size_t out = w.shape[0], taps = w.data.size() / out;
        offsets[i].assign(out, 0.0);
        for (std::size_t o = 0; o < out; ++o) {
          for (std::size_t t = 0; t < taps; ++t) {
            const double mag = std::abs(static_cast<double>(w.data[o * taps + t]));
            if (mag > clip) offsets[i][o] -= mag - clip;
          }
        }
      }
    } else {
      const FormatChoice cf = choose_format(features.data, bits);
      const FormatChoice cw = choose_format(w.data, bits);
      rep.input_format = cf.format;
      rep.weight_format = cw.format;
      rep.degenerate = cf.degenerate || cw.degenerate;
    }
    rep.feature_coverage = coverage(features, rep.input_format);
    rep.weight_coverage = coverage(w, rep.weight_format);
    m.quantized[i].kernel = QuantizedKernel{rep.input_format, quantize(w, rep.weight_format)};
    result.layers.push_back(rep);
  }

  const QFormat score_format = choose_format(scores, kScoreBits).format;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind != LayerKind::batchnorm) continue;
    // The kernel this batch-norm consumes.
    std::size_t k = i;
    while (k > 0 && !spec.layers[k].has_kernel()) --k;
    if (!spec.layers[k].has_kernel()) {
      throw std::invalid_argument("quantize_model: batch-norm at layer " +
                                  std::to_string(i) + " has no preceding kernel");
    }
    const QuantizedKernel& qk = *m.quantized[k].kernel;
    const int acc_frac = adder ? qk.input_format.frac_bits
                               : qk.input_format.frac_bits + qk.weight.format.frac_bits;
    QFormat out_format = score_format;
    for (std::size_t j = i + 1; j < spec.layers.size(); ++j) {
      if (spec.layers[j].has_kernel()) {
        out_format = m.quantized[j].kernel->input_format;
        break;
      }
    }
    const auto& p = float_model.float_params[i];
    QuantizedBatchNorm bn;
    bn.output_format = out_format;
    for (std::size_t c = 0; c < spec.layers[i].channels; ++c) {
      const double a = p[0].data[c] / std::sqrt(static_cast<double>(p[3].data[c]) + kBatchNormEps);
      double b = p[1].data[c] - a * p[2].data[c];
      // True kernel output = clipped output + offset.
      if (k + 1 == i && !offsets[k].empty()) b += a * offsets[k][c];
      const FoldedAffine f = fold_affine(a, b, acc_frac, out_format.frac_bits);
      bn.mult.push_back(f.mult);
      bn.shift.push_back(f.shift);
      bn.bias.push_back(f.bias);
    }
    m.quantized[i].batchnorm = std::move(bn);
  }
  m.validate();
  return result;
}

}  // namespace adderkernel
