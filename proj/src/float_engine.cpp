#include "adderkernel/float_engine.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "adderkernel/errors.hpp"

namespace adderkernel::train {

void similarity_forward(KernelKind kind, const float* cols, std::size_t rows,
                        std::size_t positions, const float* weight,
                        std::size_t out_channels, float* out) {
  for (std::size_t co = 0; co < out_channels; ++co) {
    float* acc = out + co * positions;
    std::fill(acc, acc + positions, 0.0f);
    const float* wrow = weight + co * rows;
    for (std::size_t r = 0; r < rows; ++r) {
      const float wv = wrow[r];
      const float* x = cols + r * positions;
      if (kind == KernelKind::adder) {
        for (std::size_t p = 0; p < positions; ++p) acc[p] -= std::fabs(x[p] - wv);
      } else {
        for (std::size_t p = 0; p < positions; ++p) acc[p] += x[p] * wv;
      }
    }
  }
}

void similarity_backward(KernelKind kind, FeatureGrad feature_grad,
                         const float* cols, std::size_t rows,
                         std::size_t positions, const float* weight,
                         std::size_t out_channels, const float* grad_out,
                         float* grad_weight, float* grad_cols) {
  for (std::size_t co = 0; co < out_channels; ++co) {
    const float* g = grad_out + co * positions;
    const float* wrow = weight + co * rows;
    float* gwrow = grad_weight + co * rows;
    for (std::size_t r = 0; r < rows; ++r) {
      const float wv = wrow[r];
      const float* x = cols + r * positions;
      float* gx = grad_cols + r * positions;
      float gw = 0.0f;
      if (kind == KernelKind::multiply) {
        for (std::size_t p = 0; p < positions; ++p) {
          gw += g[p] * x[p];
          gx[p] += g[p] * wv;
        }
      } else if (feature_grad == FeatureGrad::hardtanh) {
        for (std::size_t p = 0; p < positions; ++p) {
          const float d = x[p] - wv;
          gw += g[p] * d;
          gx[p] += g[p] * std::clamp(-d, -1.0f, 1.0f);
        }
      } else {
        for (std::size_t p = 0; p < positions; ++p) {
          const float d = x[p] - wv;
          gw += g[p] * d;
          gx[p] += g[p] * static_cast<float>((d < 0.0f) - (d > 0.0f));
        }
      }
      gwrow[r] += gw;
    }
  }
}

void im2col(const float* in, std::size_t h, std::size_t w, const ConvSpec& spec,
            std::size_t oh, std::size_t ow, float* cols) {
  const std::size_t positions = oh * ow;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < spec.in_channels; ++ci) {
    for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < spec.kernel_w; ++kx, ++row) {
        float* dst = cols + row * positions;
        for (std::size_t y = 0; y < oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * spec.stride_h + ky) -
                          static_cast<std::ptrdiff_t>(spec.pad_h);
          for (std::size_t x = 0; x < ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * spec.stride_w + kx) -
                            static_cast<std::ptrdiff_t>(spec.pad_w);
            const bool inside = iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                ix >= 0 && ix < static_cast<std::ptrdiff_t>(w);
            dst[y * ow + x] = inside ? in[(ci * h + iy) * w + ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* cols, std::size_t h, std::size_t w,
                const ConvSpec& spec, std::size_t oh, std::size_t ow, float* out) {
  const std::size_t positions = oh * ow;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < spec.in_channels; ++ci) {
    for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < spec.kernel_w; ++kx, ++row) {
        const float* src = cols + row * positions;
        for (std::size_t y = 0; y < oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * spec.stride_h + ky) -
                          static_cast<std::ptrdiff_t>(spec.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t x = 0; x < ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * spec.stride_w + kx) -
                            static_cast<std::ptrdiff_t>(spec.pad_w);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            out[(ci * h + iy) * w + ix] += src[y * ow + x];
          }
        }
      }
    }
  }
}

FloatEngine::FloatEngine(const NetworkSpec& spec, std::vector<LayerParams>& params,
                         FeatureGrad feature_grad)
    : spec_(spec),
      shapes_(spec.infer_shapes()),
      params_(params),
      grads_(make_default_params(spec)),
      feature_grad_(feature_grad),
      cache_(spec.layers.size()) {
  if (params_.size() != spec_.layers.size()) {
    throw ShapeError("FloatEngine: parameter table does not match the spec");
  }
  zero_grad();
}

void FloatEngine::zero_grad() {
  for (auto& layer : grads_) {
    for (auto& t : layer) std::fill(t.data.begin(), t.data.end(), 0.0f);
  }
}

const Batch& FloatEngine::forward(const Batch& input, bool training,
                                  const KernelInputObserver& observer) {
  if (input.sample_shape != spec_.input_shape ||
      input.data.size() != input.n * input.sample_size()) {
    throw ShapeError("FloatEngine: input batch shape " +
                     shape_to_string(input.sample_shape) + " != " +
                     shape_to_string(spec_.input_shape));
  }
  Batch cur = input;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    if (l.has_kernel() && observer) observer(i, cur);
    if (training) cache_[i].input = cur;
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::fc:
        cur = forward_kernel(i, cur, training);
        break;
      case LayerKind::batchnorm:
        cur = forward_batchnorm(i, cur, training);
        break;
      case LayerKind::pool:
        cur = forward_pool(i, cur, training);
        break;
      case LayerKind::relu:
        for (auto& v : cur.data) v = std::max(v, 0.0f);
        break;
      case LayerKind::flatten:
        cur.sample_shape = shapes_[i];
        break;
    }
  }
  output_ = std::move(cur);
  return output_;
}

Batch FloatEngine::forward_kernel(std::size_t i, const Batch& in, bool training) {
  const LayerSpec& l = spec_.layers[i];
  const ConvSpec& cs = l.conv;
  const float* w = params_[i][0].data.data();
  Batch out;
  out.n = in.n;
  out.sample_shape = shapes_[i];
  out.data.assign(in.n * shape_size(shapes_[i]), 0.0f);

  if (l.kind == LayerKind::fc) {
    // Batch positions become the columns: cols[r][s] = x[s][r].
    const std::size_t rows = cs.in_channels, n = in.n;
    std::vector<float> cols(rows * n);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t r = 0; r < rows; ++r) cols[r * n + s] = in.data[s * rows + r];
    }
    std::vector<float> res(cs.out_channels * n);
    similarity_forward(cs.kind, cols.data(), rows, n, w, cs.out_channels, res.data());
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t m = 0; m < cs.out_channels; ++m) {
        out.data[s * cs.out_channels + m] = res[m * n + s];
      }
    }
    if (training) cache_[i].cols = std::move(cols);
    return out;
  }

  const Shape& is = in.sample_shape;
  const std::size_t oh = shapes_[i][1], ow = shapes_[i][2];
  const std::size_t rows = cs.terms_per_output(), positions = oh * ow;
  std::vector<float> local;
  std::vector<float>& cols = training ? cache_[i].cols : local;
  cols.assign(in.n * rows * positions, 0.0f);
  for (std::size_t s = 0; s < in.n; ++s) {
    float* c = cols.data() + s * rows * positions;
    im2col(in.data.data() + s * in.sample_size(), is[1], is[2], cs, oh, ow, c);
    similarity_forward(cs.kind, c, rows, positions, w, cs.out_channels,
                       out.data.data() + s * out.sample_size());
  }
  return out;
}

Batch FloatEngine::forward_batchnorm(std::size_t i, const Batch& in, bool training) {
  const std::size_t channels = spec_.layers[i].channels;
  const std::size_t spatial = in.sample_size() / channels;
  const std::size_t count = in.n * spatial;
  auto& p = params_[i];
  const float* gamma = p[0].data.data();
  const float* beta = p[1].data.data();
  float* run_mean = p[2].data.data();
  float* run_var = p[3].data.data();

  Batch out = in;
  Cache& c = cache_[i];
  if (training) {
    c.xhat.assign(in.data.size(), 0.0f);
    c.inv_std.assign(channels, 0.0f);
  }
  for (std::size_t ch = 0; ch < channels; ++ch) {
    float mean, inv_std;
    if (training) {
      double sum = 0.0, sq = 0.0;
      for (std::size_t s = 0; s < in.n; ++s) {
        const float* x = in.data.data() + s * in.sample_size() + ch * spatial;
        for (std::size_t k = 0; k < spatial; ++k) sum += x[k];
      }
      const double m = sum / static_cast<double>(count);
      for (std::size_t s = 0; s < in.n; ++s) {
        const float* x = in.data.data() + s * in.sample_size() + ch * spatial;
        for (std::size_t k = 0; k < spatial; ++k) sq += (x[k] - m) * (x[k] - m);
      }
      const double var = sq / static_cast<double>(count);
      mean = static_cast<float>(m);
      inv_std = static_cast<float>(1.0 / std::sqrt(var + kBatchNormEps));
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      run_mean[ch] = (1.0f - bn_momentum) * run_mean[ch] + bn_momentum * mean;
      run_var[ch] = (1.0f - bn_momentum) * run_var[ch] +
                    bn_momentum * static_cast<float>(unbiased);
      c.inv_std[ch] = inv_std;
    } else {
      mean = run_mean[ch];
      inv_std = 1.0f / std::sqrt(run_var[ch] + kBatchNormEps);
    }
    for (std::size_t s = 0; s < in.n; ++s) {
      const std::size_t base = s * in.sample_size() + ch * spatial;
      for (std::size_t k = 0; k < spatial; ++k) {
        const float xh = (in.data[base + k] - mean) * inv_std;
        if (training) c.xhat[base + k] = xh;
        out.data[base + k] = gamma[ch] * xh + beta[ch];
      }
    }
  }
  return out;
}

Batch FloatEngine::forward_pool(std::size_t i, const Batch& in, bool training) {
  const PoolSpec& ps = spec_.layers[i].pool;
  const Shape& is = in.sample_shape;
  const std::size_t c = is[0], h = is[1], w = is[2];
  const std::size_t oh = shapes_[i][1], ow = shapes_[i][2];
  Batch out;
  out.n = in.n;
  out.sample_shape = shapes_[i];
  out.data.assign(in.n * c * oh * ow, 0.0f);
  if (training) cache_[i].arg.assign(out.data.size(), 0);
  const float inv = 1.0f / static_cast<float>(ps.window * ps.window);
  for (std::size_t s = 0; s < in.n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t in_base = (s * c + ch) * h * w;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          const std::size_t o = ((s * c + ch) * oh + y) * ow + x;
          float best = -INFINITY, sum = 0.0f;
          std::size_t best_idx = 0;
          for (std::size_t dy = 0; dy < ps.window; ++dy) {
            for (std::size_t dx = 0; dx < ps.window; ++dx) {
              const std::size_t idx = in_base + (y * ps.stride + dy) * w + x * ps.stride + dx;
              sum += in.data[idx];
              if (in.data[idx] > best) {
                best = in.data[idx];
                best_idx = idx;
              }
            }
          }
          out.data[o] = ps.mode == PoolMode::max ? best : sum * inv;
          if (training) cache_[i].arg[o] = best_idx;
        }
      }
    }
  }
  return out;
}

void FloatEngine::backward(const Batch& grad_output) {
  if (grad_output.data.size() != output_.data.size()) {
    throw ShapeError("FloatEngine::backward: gradient does not match output");
  }
  Batch g = grad_output;
  for (std::size_t ii = spec_.layers.size(); ii-- > 0;) {
    const LayerSpec& l = spec_.layers[ii];
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::fc:
        g = backward_kernel(ii, g);
        break;
      case LayerKind::batchnorm:
        g = backward_batchnorm(ii, g);
        break;
      case LayerKind::pool:
        g = backward_pool(ii, g);
        break;
      case LayerKind::relu: {
        const auto& x = cache_[ii].input.data;
        for (std::size_t k = 0; k < g.data.size(); ++k) {
          if (x[k] <= 0.0f) g.data[k] = 0.0f;
        }
        break;
      }
      case LayerKind::flatten:
        g.sample_shape = cache_[ii].input.sample_shape;
        break;
    }
  }
}

Batch FloatEngine::backward_kernel(std::size_t i, const Batch& grad) {
  const LayerSpec& l = spec_.layers[i];
  const ConvSpec& cs = l.conv;
  const Cache& c = cache_[i];
  const float* w = params_[i][0].data.data();
  float* gw = grads_[i][0].data.data();
  Batch gin;
  gin.n = grad.n;
  gin.sample_shape = c.input.sample_shape;
  gin.data.assign(c.input.data.size(), 0.0f);

  if (l.kind == LayerKind::fc) {
    const std::size_t rows = cs.in_channels, n = grad.n, m = cs.out_channels;
    std::vector<float> g(m * n), gcols(rows * n, 0.0f);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t k = 0; k < m; ++k) g[k * n + s] = grad.data[s * m + k];
    }
    similarity_backward(cs.kind, feature_grad_, c.cols.data(), rows, n, w, m,
                        g.data(), gw, gcols.data());
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t r = 0; r < rows; ++r) gin.data[s * rows + r] = gcols[r * n + s];
    }
    return gin;
  }

  const Shape& is = c.input.sample_shape;
  const std::size_t oh = shapes_[i][1], ow = shapes_[i][2];
  const std::size_t rows = cs.terms_per_output(), positions = oh * ow;
  std::vector<float> gcols(rows * positions);
  for (std::size_t s = 0; s < grad.n; ++s) {
    std::fill(gcols.begin(), gcols.end(), 0.0f);
    similarity_backward(cs.kind, feature_grad_, c.cols.data() + s * rows * positions,
                        rows, positions, w, cs.out_channels,
                        grad.data.data() + s * grad.sample_size(), gw, gcols.data());
    col2im_add(gcols.data(), is[1], is[2], cs, oh, ow,
               gin.data.data() + s * gin.sample_size());
  }
  return gin;
}

Batch FloatEngine::backward_batchnorm(std::size_t i, const Batch& grad) {
  const std::size_t channels = spec_.layers[i].channels;
  const std::size_t spatial = grad.sample_size() / channels;
  const auto count = static_cast<double>(grad.n * spatial);
  const Cache& c = cache_[i];
  const float* gamma = params_[i][0].data.data();
  float* ggamma = grads_[i][0].data.data();
  float* gbeta = grads_[i][1].data.data();
  Batch gin = grad;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t s = 0; s < grad.n; ++s) {
      const std::size_t base = s * grad.sample_size() + ch * spatial;
      for (std::size_t k = 0; k < spatial; ++k) {
        sum_g += grad.data[base + k];
        sum_gx += grad.data[base + k] * c.xhat[base + k];
      }
    }
    ggamma[ch] += static_cast<float>(sum_gx);
    gbeta[ch] += static_cast<float>(sum_g);
    const double scale = gamma[ch] * c.inv_std[ch];
    const double mean_g = sum_g / count, mean_gx = sum_gx / count;
    for (std::size_t s = 0; s < grad.n; ++s) {
      const std::size_t base = s * grad.sample_size() + ch * spatial;
      for (std::size_t k = 0; k < spatial; ++k) {
        gin.data[base + k] = static_cast<float>(
            scale * (grad.data[base + k] - mean_g - c.xhat[base + k] * mean_gx));
      }
    }
  }
  return gin;
}

Batch FloatEngine::backward_pool(std::size_t i, const Batch& grad) {
  const PoolSpec& ps = spec_.layers[i].pool;
  const Cache& c = cache_[i];
  Batch gin;
  gin.n = grad.n;
  gin.sample_shape = c.input.sample_shape;
  gin.data.assign(c.input.data.size(), 0.0f);
  if (ps.mode == PoolMode::max) {
    for (std::size_t o = 0; o < grad.data.size(); ++o) gin.data[c.arg[o]] += grad.data[o];
    return gin;
  }
  const Shape& is = c.input.sample_shape;
  const std::size_t ch = is[0], h = is[1], w = is[2];
  const std::size_t oh = shapes_[i][1], ow = shapes_[i][2];
  const float inv = 1.0f / static_cast<float>(ps.window * ps.window);
  for (std::size_t s = 0; s < grad.n; ++s) {
    for (std::size_t k = 0; k < ch; ++k) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          const float g = grad.data[((s * ch + k) * oh + y) * ow + x] * inv;
          for (std::size_t dy = 0; dy < ps.window; ++dy) {
            for (std::size_t dx = 0; dx < ps.window; ++dx) {
              gin.data[((s * ch + k) * h + y * ps.stride + dy) * w + x * ps.stride + dx] += g;
            }
          }
        }
      }
    }
  }
  return gin;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  Batch b;
  b.n = indices.size();
  b.sample_shape = data.sample_shape;
  const std::size_t sz = data.sample_size();
  b.data.resize(b.n * sz);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto img = data.image(indices[k]);
    std::copy(img.begin(), img.end(), b.data.begin() + static_cast<std::ptrdiff_t>(k * sz));
  }
  return b;
}

}  // namespace adderkernel::train
