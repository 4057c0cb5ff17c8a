#include <doctest.h>

#include <algorithm>
#include <random>

#include "adderkernel/network.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace adderkernel;

namespace {

// Integer pipeline written directly from the layer definitions.
std::vector<std::int64_t> reference_forward(const ModelBundle& m, const QTensor& input) {
  std::vector<std::int64_t> cur(input.data.begin(), input.data.end());
  Shape shape = input.shape;
  const auto shapes = m.spec.infer_shapes();
  const bool adder = m.spec.kernel_kind == KernelKind::adder;
  for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
    const LayerSpec& l = m.spec.layers[i];
    if (l.kind == LayerKind::conv) {
      std::vector<std::int32_t> narrow(cur.begin(), cur.end());
      const QTensor f(shape, narrow, m.quantized[i].kernel->input_format);
      cur = oracle::conv2d(f, m.quantized[i].kernel->weight, l.conv, adder);
    } else if (l.kind == LayerKind::fc) {
      const auto& w = m.quantized[i].kernel->weight;
      std::vector<std::int64_t> out(l.conv.out_channels, 0);
      for (std::size_t o = 0; o < out.size(); ++o) {
        for (std::size_t n = 0; n < cur.size(); ++n) {
          const std::int64_t b = w.data[o * cur.size() + n];
          out[o] += adder ? -std::abs(cur[n] - b) : cur[n] * b;
        }
      }
      cur = out;
    } else if (l.kind == LayerKind::batchnorm) {
      const auto& bn = *m.quantized[i].batchnorm;
      const std::size_t per = cur.size() / l.channels;
      const std::int64_t hi = bn.output_format.max_code();
      for (std::size_t k = 0; k < cur.size(); ++k) {
        const std::size_t c = k / per;
        std::int64_t y = oracle::round_shift(cur[k] * bn.mult[c], bn.shift[c]) + bn.bias[c];
        cur[k] = std::clamp(y, -hi, hi);
      }
    } else if (l.kind == LayerKind::relu) {
      for (auto& v : cur) v = std::max<std::int64_t>(v, 0);
    } else if (l.kind == LayerKind::pool) {
      const std::size_t c = shape[0], h = shape[1], w = shape[2];
      const std::size_t oh = shapes[i][1], ow = shapes[i][2], k = l.pool.window;
      std::vector<std::int64_t> out;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t x = 0; x < ow; ++x) {
            std::int64_t best = INT64_MIN;
            for (std::size_t dy = 0; dy < k; ++dy) {
              for (std::size_t dx = 0; dx < k; ++dx) {
                best = std::max(best, cur[(ch * h + y * l.pool.stride + dy) * w +
                                          x * l.pool.stride + dx]);
              }
            }
            out.push_back(best);
          }
        }
      }
      cur = out;
    }
    shape = shapes[i];
  }
  return cur;
}

}  // namespace

TEST_SUITE("network") {
  TEST_CASE("LeNet-5 structure") {
    const NetworkSpec net = build_lenet5(KernelKind::adder);
    const auto k = kernel_layer_indices(net);
    REQUIRE(k.size() == 5);
    CHECK(net.layers[k[0]].conv.in_channels == 1);
    CHECK(net.layers[k[0]].conv.out_channels == 6);
    CHECK(net.layers[k[0]].conv.kernel_h == 5);
    CHECK(net.layers[k[1]].conv.in_channels == 6);
    CHECK(net.layers[k[1]].conv.out_channels == 16);
    CHECK(net.layers[k[2]].conv.in_channels == 400);
    CHECK(net.layers[k[2]].conv.out_channels == 120);
    CHECK(net.layers[k[3]].conv.out_channels == 84);
    CHECK(net.output_shape() == Shape{10});
    CHECK(net.infer_shapes()[k[1]] == Shape{16, 10, 10});
    for (std::size_t i : k) CHECK(net.layers[i].conv.kind == KernelKind::adder);
    CHECK(build_lenet5(KernelKind::multiply).layers[k[0]].conv.kind == KernelKind::multiply);
  }

  TEST_CASE("shape errors name the layer") {
    NetworkSpec net = build_lenet5(KernelKind::adder);
    net.layers[9].conv.in_channels = 399;
    try {
      net.validate();
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("layer 9") != std::string::npos);
    }
    NetworkSpec mixed = build_lenet5(KernelKind::adder);
    mixed.layers[0].conv.kind = KernelKind::multiply;
    CHECK_THROWS_AS(mixed.validate(), ShapeError);
  }

  TEST_CASE("quantized forward matches the reference pipeline") {
    for (KernelKind kind : {KernelKind::adder, KernelKind::multiply}) {
      const ModelBundle m = fixtures::quantized(kind);
      const Dataset d = fixtures::random_digits(8, 99);
      for (std::size_t i = 0; i < d.size(); ++i) {
        const QTensor x = quantize_input(m, d.image(i));
        const InferenceResult r = forward(m, x);
        REQUIRE(r.scores == reference_forward(m, x));
        CHECK(r.scores.size() == 10);
        CHECK(r.predicted == argmax<std::int64_t>(r.scores));
      }
    }
  }

  TEST_CASE("adder bundles carry one format per kernel layer") {
    const ModelBundle m = fixtures::quantized(KernelKind::adder);
    CHECK_NOTHROW(m.validate());
    for (std::size_t i : kernel_layer_indices(m.spec)) {
      CHECK(m.quantized[i].kernel->weight.format == m.quantized[i].kernel->input_format);
    }
  }

  TEST_CASE("forward is deterministic and batch independent") {
    const ModelBundle m = fixtures::quantized(KernelKind::adder);
    const QTensor zero(m.spec.input_shape, std::vector<std::int32_t>(784, 0), input_format(m));
    const InferenceResult a = forward(m, zero), b = forward(m, zero, 4);
    CHECK(a.scores == b.scores);
    CHECK(a.stats.size() == m.spec.layers.size());

    const Dataset d = fixtures::random_digits(12, 5);
    std::vector<QTensor> xs;
    for (std::size_t i = 0; i < d.size(); ++i) xs.push_back(quantize_input(m, d.image(i)));
    const auto serial = forward_batch(m, xs, 1);
    const auto parallel = forward_batch(m, xs, 3);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      CHECK(serial[i].scores == forward(m, xs[i]).scores);
      CHECK(parallel[i].scores == serial[i].scores);
    }
  }

  TEST_CASE("format mismatch reports the offending layer") {
    ModelBundle m = fixtures::quantized(KernelKind::adder);
    const auto k = kernel_layer_indices(m.spec);
    auto& qk = *m.quantized[k[1]].kernel;
    qk.input_format.frac_bits += 1;
    qk.weight.format = qk.input_format;
    const QTensor x = quantize_input(m, fixtures::random_digits(1, 1).image(0));
    try {
      (void)forward(m, x);
      FAIL("expected LayerFormatError");
    } catch (const LayerFormatError& e) {
      CHECK(e.layer() == k[1]);
    }
    CHECK_THROWS_AS(m.validate(), LayerFormatError);

    QTensor wrong = x;
    wrong.format.frac_bits += 1;
    CHECK_THROWS_AS(forward(fixtures::quantized(KernelKind::adder), wrong), LayerFormatError);
  }

  TEST_CASE("accuracy") {
    const ModelBundle m = fixtures::quantized(KernelKind::adder);
    Dataset d = fixtures::random_digits(40, 8);
    for (std::size_t i = 0; i < d.size(); ++i) {
      d.labels[i] = static_cast<std::uint8_t>(forward(m, quantize_input(m, d.image(i))).predicted);
    }
    CHECK(evaluate_accuracy(m, d) == 1.0);
    CHECK(evaluate_accuracy(m, d, 3) == 1.0);

    std::mt19937_64 rng(10);
    std::uniform_int_distribution<int> cls(0, 9);
    std::vector<int> pred(10000);
    std::vector<std::uint8_t> labels(10000);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = cls(rng);
      labels[i] = static_cast<std::uint8_t>(i % 10);
    }
    CHECK(top1_accuracy(pred, labels) == doctest::Approx(0.1).epsilon(0.2));

    CHECK_THROWS_AS(evaluate_accuracy(m, Dataset{{1, 28, 28}, {}, {}}), std::invalid_argument);
    d.labels[0] = 10;
    CHECK_THROWS_AS(evaluate_accuracy(m, d), std::invalid_argument);
  }

  TEST_CASE("argmax breaks ties toward the lowest index") {
    const std::vector<int> v{3, 7, 7, 1};
    CHECK(argmax<int>(v) == 1);
    const std::vector<int> same(10, 0);
    CHECK(argmax<int>(same) == 0);
  }

  TEST_CASE("quantize_model rejects bad bit widths") {
    const auto m = fixtures::untrained(KernelKind::adder);
    const auto d = fixtures::random_digits(8, 1);
    CHECK_THROWS_AS(quantize_model(m, d, 3), std::invalid_argument);
    CHECK_THROWS_AS(quantize_model(m, d, 17), std::invalid_argument);
    const QuantizeResult r = quantize_model(m, d, 4);
    CHECK(r.model.quant_bits == 4);
    CHECK(r.layers.size() == 5);
    for (const auto& l : r.layers) {
      CHECK(l.input_format.bits == 4);
      CHECK(l.feature_coverage.fraction_in_clip >= 0.0);
      CHECK(l.feature_coverage.fraction_in_clip <= 1.0);
    }
  }

  TEST_CASE("folded affine reproduces the real-valued map") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> a(-3, 3), b(-2, 2);
    std::uniform_int_distribution<std::int64_t> x(-20000, 20000);
    for (int trial = 0; trial < 500; ++trial) {
      const double av = a(rng), bv = b(rng);
      const int acc_frac = trial % 9, out_frac = trial % 7;
      const FoldedAffine f = fold_affine(av, bv, acc_frac, out_frac);
      CHECK(std::abs(f.mult) < (std::int64_t{1} << 24));
      const std::int64_t xv = x(rng);
      const double want = (av * std::ldexp(static_cast<double>(xv), -acc_frac) + bv) *
                          std::ldexp(1.0, out_frac);
      const std::int64_t got = oracle::round_shift(xv * f.mult, f.shift) + f.bias;
      // bias rounding + shift rounding + multiplier rounding
      const double bound = 1.0 + std::ldexp(std::abs(static_cast<double>(xv)), -f.shift - 1);
      REQUIRE(std::abs(static_cast<double>(got) - want) <= bound + 1e-9);
    }
  }

  TEST_CASE("clipped adder weights only shift the output") {
    // -|f - w| = -|f - sign(w) c| - (|w| - c) whenever |f| <= c <= |w|.
    for (std::int64_t c = 0; c <= 20; ++c)
      for (std::int64_t f = -c; f <= c; ++f)
        for (std::int64_t w = -40; w <= 40; ++w) {
          if (std::abs(w) < c) continue;
          const std::int64_t clipped = w < 0 ? -c : c;
          REQUIRE(-std::abs(f - w) == -std::abs(f - clipped) - (std::abs(w) - c));
        }

    // Every kernel weight pushed 5 units outward: all of conv1 lies past the
    // activation range, yet the integer model tracks the float one.
    ModelBundle m = fixtures::untrained(KernelKind::adder);
    for (std::size_t i : kernel_layer_indices(m.spec))
      for (auto& v : m.float_params[i][0].data) v += v < 0 ? -5.0f : 5.0f;
    const QuantizeResult q = quantize_model(m, fixtures::random_digits(64, 17), 8);
    CHECK(q.layers[0].weight_coverage.fraction_in_clip == 0.0);
    const Dataset d = fixtures::random_digits(200, 4);
    const auto fp = train::float_predict(m, d);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
      agree += forward(q.model, quantize_input(q.model, d.image(i))).predicted == fp[i];
    CHECK(agree >= 196);
  }
}
