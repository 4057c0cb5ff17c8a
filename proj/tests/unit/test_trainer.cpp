#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "adderkernel/errors.hpp"
#include "adderkernel/trainer.hpp"
#include "fixtures.hpp"

using namespace adderkernel;
using namespace adderkernel::train;

namespace {

// Direct loops over outputs and taps; padded taps read F = 0 and receive no
// feature gradient.
AdderGrads brute_backward(const FloatTensor& f, const FloatTensor& w, const FloatTensor& up,
                          const ConvSpec& s, FeatureGrad mode) {
  const std::size_t h = f.shape[1], wd = f.shape[2];
  const std::size_t oh = up.shape[1], ow = up.shape[2];
  AdderGrads g{FloatTensor(f.shape), FloatTensor(w.shape)};
  for (std::size_t o = 0; o < s.out_channels; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const double u = up.data[(o * oh + y) * ow + x];
        for (std::size_t c = 0; c < s.in_channels; ++c)
          for (std::size_t ky = 0; ky < s.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
              const auto iy = static_cast<long>(y * s.stride_h + ky) - static_cast<long>(s.pad_h);
              const auto ix = static_cast<long>(x * s.stride_w + kx) - static_cast<long>(s.pad_w);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(h) &&
                                  ix < static_cast<long>(wd);
              const std::size_t fi =
                  inside ? (c * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix) : 0;
              const double fv = inside ? f.data[fi] : 0.0;
              const std::size_t wi = ((o * s.in_channels + c) * s.kernel_h + ky) * s.kernel_w + kx;
              const double wv = w.data[wi];
              g.grad_weight.data[wi] += static_cast<float>(u * (fv - wv));
              if (inside) {
                const double d = wv - fv;
                const double t = mode == FeatureGrad::hardtanh ? std::clamp(d, -1.0, 1.0)
                                                               : (d > 0) - (d < 0);
                g.grad_feature.data[fi] += static_cast<float>(u * t);
              }
            }
      }
  return g;
}

FloatTensor random_tensor(std::mt19937_64& rng, Shape s, double lo, double hi) {
  FloatTensor t(std::move(s));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data) v = static_cast<float>(d(rng));
  return t;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("cross entropy") {
    const std::vector<double> flat(10, 3.5);
    const auto ce = cross_entropy(flat, 4);
    CHECK(ce.loss == doctest::Approx(std::log(10.0)));
    double sum = 0;
    for (double g : ce.grad) sum += g;
    CHECK(sum == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ce.grad[4] == doctest::Approx(0.1 - 1.0));

    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0, 3);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> s(10);
      for (auto& v : s) v = n(rng);
      const int label = trial % 10;
      const auto base = cross_entropy(s, label);
      for (std::size_t k = 0; k < s.size(); ++k) {
        const double h = 1e-6;
        auto p = s, m = s;
        p[k] += h;
        m[k] -= h;
        const double fd = (cross_entropy(p, label).loss - cross_entropy(m, label).loss) / (2 * h);
        CHECK(std::abs(fd - base.grad[k]) <= 1e-5);
      }
    }
    const std::vector<double> huge{1e300, -1e300, 0};
    CHECK(std::isfinite(cross_entropy(huge, 1).loss));
    CHECK_THROWS_AS(cross_entropy(flat, 10), std::invalid_argument);
  }

  TEST_CASE("cosine schedule") {
    CHECK(cosine_lr(0.05, 0, 10) == doctest::Approx(0.05));
    CHECK(cosine_lr(0.05, 5, 10) == doctest::Approx(0.025));
    CHECK(cosine_lr(0.05, 10, 10) == doctest::Approx(0.0));
    for (int e = 1; e <= 10; ++e) CHECK(cosine_lr(1, e, 10) < cosine_lr(1, e - 1, 10));
  }

  TEST_CASE("scalar adder gradient") {
    ConvSpec s;
    const FloatTensor up({1, 1, 1}, {1.0f});
    for (FeatureGrad mode : {FeatureGrad::hardtanh, FeatureGrad::sign}) {
      const auto g = adder_layer_backward(FloatTensor({1, 1, 1}, {3.0f}),
                                          FloatTensor({1, 1, 1, 1}, {1.0f}), up, s, mode);
      CHECK(g.grad_weight.data[0] == 2.0f);
      CHECK(g.grad_feature.data[0] == -1.0f);
      const auto eq = adder_layer_backward(FloatTensor({1, 1, 1}, {0.7f}),
                                           FloatTensor({1, 1, 1, 1}, {0.7f}), up, s, mode);
      CHECK(eq.grad_weight.data[0] == 0.0f);
      CHECK(eq.grad_feature.data[0] == 0.0f);
    }
    const auto small = adder_layer_backward(FloatTensor({1, 1, 1}, {0.25f}),
                                            FloatTensor({1, 1, 1, 1}, {0.75f}), up, s);
    CHECK(small.grad_feature.data[0] == doctest::Approx(0.5));
  }

  TEST_CASE("adder gradient matches direct loops") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<std::size_t> dim(1, 3), hw(3, 7), st(1, 2);
    for (int trial = 0; trial < 60; ++trial) {
      ConvSpec s;
      s.in_channels = dim(rng);
      s.out_channels = dim(rng);
      s.kernel_h = dim(rng);
      s.kernel_w = dim(rng);
      s.stride_h = st(rng);
      s.stride_w = st(rng);
      s.pad_h = std::uniform_int_distribution<std::size_t>(0, s.kernel_h - 1)(rng);
      s.pad_w = std::uniform_int_distribution<std::size_t>(0, s.kernel_w - 1)(rng);
      const std::size_t h = hw(rng), w = hw(rng);
      const auto f = random_tensor(rng, {s.in_channels, h, w}, -2, 2);
      const auto wt = random_tensor(rng, {s.out_channels, s.in_channels, s.kernel_h, s.kernel_w}, -2, 2);
      const auto up = random_tensor(rng, {s.out_channels, s.out_h(h), s.out_w(w)}, -1, 1);
      for (FeatureGrad mode : {FeatureGrad::hardtanh, FeatureGrad::sign}) {
        const auto got = adder_layer_backward(f, wt, up, s, mode);
        const auto want = brute_backward(f, wt, up, s, mode);
        for (std::size_t k = 0; k < want.grad_weight.size(); ++k)
          REQUIRE(got.grad_weight.data[k] == doctest::Approx(want.grad_weight.data[k]).epsilon(1e-4));
        for (std::size_t k = 0; k < want.grad_feature.size(); ++k)
          REQUIRE(got.grad_feature.data[k] == doctest::Approx(want.grad_feature.data[k]).epsilon(1e-4));
      }
    }
    ConvSpec s;
    CHECK_THROWS_AS(adder_layer_backward(FloatTensor({2, 1, 1}), FloatTensor({1, 1, 1, 1}),
                                         FloatTensor({1, 1, 1}), s),
                    ShapeError);
  }

  TEST_CASE("weight decay shrinks weights without momentum") {
    std::vector<LayerParams> p{{FloatTensor({3}, {1.0f, -2.0f, 4.0f})}};
    std::vector<LayerParams> g{{FloatTensor({3})}};
    SgdMomentum opt(p, 0.0, 0.1);
    opt.step(p, g, 1.0);
    CHECK(p[0][0].data[0] == doctest::Approx(0.9));
    CHECK(p[0][0].data[1] == doctest::Approx(-1.8));
    CHECK(p[0][0].data[2] == doctest::Approx(3.6));

    std::vector<LayerParams> q{{FloatTensor({1}, {0.0f})}};
    std::vector<LayerParams> gq{{FloatTensor({1}, {1.0f})}};
    SgdMomentum mom(q, 0.9, 0.0);
    mom.step(q, gq, 0.1);
    mom.step(q, gq, 0.1);
    CHECK(q[0][0].data[0] == doctest::Approx(-0.1 - 0.19));
  }

  TEST_CASE("training is deterministic for a seed") {
    const Dataset d = fixtures::random_digits(48, 2);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 16;
    const auto spec = build_lenet5(KernelKind::adder);
    const auto a = train::train(spec, d, &d, cfg);
    const auto b = train::train(spec, d, &d, cfg);
    CHECK(a.model == b.model);
    REQUIRE(a.curve.size() == 1);
    CHECK(a.curve[0].test_acc == b.curve[0].test_acc);
    cfg.seed = 2;
    CHECK_FALSE(train::train(spec, d, nullptr, cfg).model == a.model);
  }

  TEST_CASE("adder classifier learns a separable problem") {
    NetworkSpec spec;
    spec.input_shape = {2};
    spec.kernel_kind = KernelKind::adder;
    spec.layers = {LayerSpec::make_fc(2, 2, KernelKind::adder), LayerSpec::make_batchnorm(2)};
    Dataset d;
    d.sample_shape = {2};
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<float> jitter(-0.15f, 0.15f);
    for (int i = 0; i < 100; ++i) {
      const int c = i % 2;
      d.images.push_back((c ? 0.8f : 0.2f) + jitter(rng));
      d.images.push_back((c ? 0.2f : 0.8f) + jitter(rng));
      d.labels.push_back(static_cast<std::uint8_t>(c));
    }
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 20;
    int epochs_seen = 0;
    const auto r = train::train(spec, d, &d, cfg, [&](const EpochStats&) { ++epochs_seen; });
    CHECK(epochs_seen == 200);
    CHECK(float_accuracy(r.model, d) == 1.0);
    CHECK(r.curve.back().train_loss < r.curve.front().train_loss);
  }

  TEST_CASE("divergence and bad input are reported") {
    Dataset d = fixtures::random_digits(8, 1);
    d.images[100] = std::numeric_limits<float>::quiet_NaN();
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(train::train(build_lenet5(KernelKind::multiply), d, nullptr, cfg), NumericError);

    cfg.lr0 = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.adder_lr_eta = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK(TrainConfig{}.adder_lr_eta == 0.2);
    CHECK_THROWS_AS(train::train(build_lenet5(KernelKind::adder), Dataset{{1, 28, 28}, {}, {}},
                                 nullptr, TrainConfig{}),
                    std::invalid_argument);
  }

  TEST_CASE("curve csv") {
    std::ostringstream os;
    write_curve_csv(os, {{1, 0.05, 0.5, 0.8, 0.75}});
    CHECK(os.str().rfind("epoch,train_loss,train_acc,test_acc\n1,", 0) == 0);
  }
}
