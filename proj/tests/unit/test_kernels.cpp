#include <doctest.h>

#include <array>
#include <random>

#include "adderkernel/hardware_model.hpp"
#include "adderkernel/kernels.hpp"
#include "oracles.hpp"

using namespace adderkernel;

namespace {

ConvSpec conv_spec(std::size_t cin, std::size_t cout, std::size_t k, KernelKind kind,
                   std::size_t stride = 1, std::size_t pad = 0) {
  ConvSpec s;
  s.kernel_h = s.kernel_w = k;
  s.in_channels = cin;
  s.out_channels = cout;
  s.stride_h = s.stride_w = stride;
  s.pad_h = s.pad_w = pad;
  s.kind = kind;
  return s;
}

QTensor qt(Shape shape, std::vector<std::int32_t> data, QFormat q = {8, 0}) {
  return QTensor(std::move(shape), std::move(data), q);
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("adder conv hand examples") {
    const auto s = conv_spec(1, 1, 2, KernelKind::adder);
    const QTensor f = qt({1, 2, 2}, {1, 2, 3, 4});
    auto r = adder_conv2d(f, qt({1, 1, 2, 2}, {0, 2, 3, 5}), s);
    REQUIRE(r.data.size() == 1);
    CHECK(r.data[0] == -2);
    CHECK(r.shape == Shape{1, 1, 1});
    r = adder_conv2d(f, qt({1, 1, 2, 2}, {1, 2, 3, 4}), s);
    CHECK(r.data[0] == 0);
  }

  TEST_CASE("mult conv hand examples") {
    const auto s = conv_spec(1, 1, 2, KernelKind::multiply);
    const QTensor f = qt({1, 2, 2}, {1, 2, 3, 4});
    CHECK(mult_conv2d(f, qt({1, 1, 2, 2}, {1, 0, 0, 1}), s).data[0] == 5);
    const auto z = mult_conv2d(qt({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}),
                               qt({1, 1, 2, 2}, {0, 0, 0, 0}), s);
    for (auto v : z.data) CHECK(v == 0);
  }

  TEST_CASE("padded positions contribute -|W|") {
    const auto s = conv_spec(1, 1, 3, KernelKind::adder, 1, 1);
    const QTensor f = qt({1, 1, 1}, {0});
    const auto r = adder_conv2d(f, qt({1, 1, 3, 3}, {1, -2, 3, -4, 0, 6, 7, -8, 9}), s);
    CHECK(r.data[0] == -(1 + 2 + 3 + 4 + 0 + 6 + 7 + 8 + 9));
  }

  TEST_CASE("random 3x3 instances match the naive loop") {
    std::mt19937_64 rng(1);
    const QFormat q{8, 3};
    for (int seed = 0; seed < 1000; ++seed) {
      rng.seed(static_cast<std::uint64_t>(seed));
      const auto s = conv_spec(3, 2, 3, KernelKind::adder);
      const QTensor f = oracle::random_qtensor(rng, {3, 8, 8}, q);
      const QTensor w = oracle::random_qtensor(rng, {2, 3, 3, 3}, q);
      REQUIRE(adder_conv2d(f, w, s).data == oracle::conv2d(f, w, s, true));
    }
  }

  TEST_CASE("random shapes, strides and padding match the naive loop") {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> pick(0, 1 << 20);
    for (int trial = 0; trial < 300; ++trial) {
      const int dw = std::array{4, 8, 16}[static_cast<std::size_t>(trial % 3)];
      const std::size_t cin = 1 + pick(rng) % 4, cout = 1 + pick(rng) % 4;
      const std::size_t k = 1 + pick(rng) % 4;
      const std::size_t h = k + pick(rng) % 10, w = k + pick(rng) % 10;
      const std::size_t stride = 1 + pick(rng) % 3, pad = pick(rng) % k;
      const QFormat qf{dw, pick(rng) % 6};
      const QTensor f = oracle::random_qtensor(rng, {cin, h, w}, qf);
      const QTensor wa = oracle::random_qtensor(rng, {cout, cin, k, k}, qf);
      auto s = conv_spec(cin, cout, k, KernelKind::adder, stride, pad);
      const AccTensor a = adder_conv2d(f, wa, s, 1 + trial % 3);
      REQUIRE(a.data == oracle::conv2d(f, wa, s, true));
      CHECK(a.acc_bits == adder_acc_bits(dw, cin * k * k));

      s.kind = KernelKind::multiply;
      const QTensor wm = oracle::random_qtensor(rng, {cout, cin, k, k}, {dw, pick(rng) % 6});
      const AccTensor m = mult_conv2d(f, wm, s, 1 + trial % 3);
      REQUIRE(m.data == oracle::conv2d(f, wm, s, false));
      CHECK(m.frac_bits == f.format.frac_bits + wm.format.frac_bits);
    }
  }

  TEST_CASE("adder conv rejects format and shape mismatches") {
    const auto s = conv_spec(1, 1, 2, KernelKind::adder);
    const QTensor f = qt({1, 2, 2}, {1, 2, 3, 4}, {8, 2});
    CHECK_THROWS_AS(adder_conv2d(f, qt({1, 1, 2, 2}, {0, 0, 0, 0}, {8, 3}), s),
                    FormatMismatchError);
    CHECK_THROWS_AS(adder_conv2d(f, qt({1, 1, 2, 2}, {0, 0, 0, 0}, {16, 2}), s),
                    FormatMismatchError);
    CHECK_THROWS_AS(adder_conv2d(f, qt({1, 1, 3, 3}, std::vector<std::int32_t>(9), {8, 2}), s),
                    ShapeError);
    CHECK_THROWS_AS(adder_conv2d(qt({2, 2, 2}, std::vector<std::int32_t>(8), {8, 2}),
                                 qt({1, 1, 2, 2}, {0, 0, 0, 0}, {8, 2}), s),
                    ShapeError);
    auto bad = s;
    bad.pad_h = 2;
    CHECK_THROWS_AS(bad.validate(), ShapeError);
    // multiply kernels accept separate formats
    auto ms = s;
    ms.kind = KernelKind::multiply;
    CHECK_NOTHROW(mult_conv2d(f, qt({1, 1, 2, 2}, {0, 0, 0, 0}, {8, 3}), ms));
  }

  TEST_CASE("adder conv properties") {
    std::mt19937_64 rng(8);
    const QFormat q{8, 0};
    for (int trial = 0; trial < 200; ++trial) {
      const auto s = conv_spec(2, 3, 3, KernelKind::adder, 1, trial % 2);
      const QTensor f = oracle::random_qtensor(rng, {2, 6, 6}, {6, 0});
      const QTensor w = oracle::random_qtensor(rng, {3, 2, 3, 3}, {6, 0});
      QTensor f8 = f, w8 = w;
      f8.format = w8.format = q;
      const AccTensor base = adder_conv2d(f8, w8, s);
      for (auto v : base.data) REQUIRE(v <= 0);

      // translation invariance (no padding, where the pad value would not move)
      if (s.pad_h == 0) {
        QTensor ft = f8, wt = w8;
        for (auto& v : ft.data) v += 17;
        for (auto& v : wt.data) v += 17;
        REQUIRE(adder_conv2d(ft, wt, s).data == base.data);
      }
      // scale equivariance
      QTensor fs = f8, ws = w8;
      for (auto& v : fs.data) v *= 3;
      for (auto& v : ws.data) v *= 3;
      const AccTensor scaled = adder_conv2d(fs, ws, s);
      for (std::size_t i = 0; i < base.data.size(); ++i) {
        REQUIRE(scaled.data[i] == 3 * base.data[i]);
      }
      // parallel == serial
      REQUIRE(adder_conv2d(f8, w8, s, 4).data == base.data);
    }
  }

  TEST_CASE("adder conv output is zero exactly where the window equals the filter") {
    const auto s = conv_spec(1, 1, 2, KernelKind::adder);
    const QTensor f = qt({1, 3, 3}, {1, 2, 1, 3, 4, 3, 1, 2, 1});
    const auto r = adder_conv2d(f, qt({1, 1, 2, 2}, {1, 2, 3, 4}), s);
    CHECK(r.data == std::vector<std::int64_t>{0, -4, -8, -8});
  }

  TEST_CASE("mult conv is bilinear") {
    std::mt19937_64 rng(12);
    const auto s = conv_spec(2, 2, 3, KernelKind::multiply);
    for (int trial = 0; trial < 100; ++trial) {
      const QTensor a = oracle::random_qtensor(rng, {2, 5, 5}, {6, 0});
      const QTensor b = oracle::random_qtensor(rng, {2, 5, 5}, {6, 0});
      const QTensor w = oracle::random_qtensor(rng, {2, 2, 3, 3}, {6, 0});
      QTensor sum = a;
      sum.format = {8, 0};
      for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += b.data[i];
      const auto ra = mult_conv2d(a, w, s), rb = mult_conv2d(b, w, s);
      const auto rs = mult_conv2d(sum, w, s);
      for (std::size_t i = 0; i < rs.data.size(); ++i) {
        REQUIRE(rs.data[i] == ra.data[i] + rb.data[i]);
      }
    }
  }

  TEST_CASE("fully connected kernels") {
    const QTensor f = qt({2}, {1, -2});
    CHECK(adder_fc(f, qt({1, 2}, {3, 1})).data[0] == -5);
    CHECK(adder_fc(f, qt({1, 2}, {1, -2})).data[0] == 0);
    CHECK(mult_fc(f, qt({1, 2}, {3, 1})).data[0] == 1);
    CHECK_THROWS_AS(adder_fc(f, qt({1, 2}, {3, 1}, {8, 1})), FormatMismatchError);
    CHECK_THROWS_AS(adder_fc(f, qt({1, 3}, {3, 1, 0})), ShapeError);

    // fc equals a 1x1 adder conv over an [N,1,1] reshape
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      const QTensor x = oracle::random_qtensor(rng, {12}, {8, 2});
      const QTensor w = oracle::random_qtensor(rng, {5, 12}, {8, 2});
      const QTensor x3(Shape{12, 1, 1}, x.data, x.format);
      const QTensor w4(Shape{5, 12, 1, 1}, w.data, w.format);
      REQUIRE(adder_fc(x, w).data ==
              adder_conv2d(x3, w4, conv_spec(12, 5, 1, KernelKind::adder)).data);
    }
  }

  TEST_CASE("round_shift and batch-norm affine") {
    CHECK(round_shift(-300, 2) == -75);
    CHECK(round_shift(6, 2) == 2);  // 1.5 rounds up
    CHECK(round_shift(-6, 2) == -1);  // -1.5 rounds up
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<std::int64_t> d(-(1LL << 40), 1LL << 40);
    for (int i = 0; i < 10000; ++i) {
      const std::int64_t v = d(rng);
      const int s = i % 30;
      REQUIRE(round_shift(v, s) == oracle::round_shift(v, s));
    }

    AccTensor x;
    x.shape = {1, 1, 1};
    x.data = {-100};
    const std::vector<std::int64_t> m{3}, b{5};
    const std::vector<int> sh{2};
    auto r = batchnorm_affine(x, m, sh, b, {8, 0});
    CHECK(r.output.data[0] == -70);
    CHECK(r.saturated == 0);

    x.data = {42};
    r = batchnorm_affine(x, std::vector<std::int64_t>{1}, std::vector<int>{0},
                         std::vector<std::int64_t>{0}, {8, 0});
    CHECK(r.output.data[0] == 42);

    x.data = {1000000};
    r = batchnorm_affine(x, m, sh, b, {8, 0});
    CHECK(r.output.data[0] == 127);
    CHECK(r.saturated == 1);
  }

  TEST_CASE("pooling and relu") {
    const QTensor c = qt({1, 4, 4}, std::vector<std::int32_t>(16, 7));
    for (auto v : maxpool2d(c, 2, 2).data) CHECK(v == 7);
    CHECK(avgpool2d(qt({1, 2, 2}, {1, 2, 3, 4}), 2, 2).data[0] == 3);
    CHECK(avgpool2d(qt({1, 2, 2}, {-1, -2, -3, -4}), 2, 2).data[0] == -2);  // -2.5 -> -2
    CHECK(maxpool2d(qt({1, 2, 2}, {1, 9, 3, 4}), 2, 2).data[0] == 9);
    const auto r = relu(qt({2}, {-5, 7}));
    CHECK(r.data == std::vector<std::int32_t>{0, 7});
    CHECK_THROWS_AS(maxpool2d(c, 5, 1), ShapeError);
    CHECK(div_round_half_up(10, 4) == 3);
    CHECK(div_round_half_up(-10, 4) == -2);
  }
}
