#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "adderkernel/dataset.hpp"
#include "adderkernel/network.hpp"
#include "adderkernel/quantize_model.hpp"
#include "adderkernel/trainer.hpp"

namespace fixtures {

using namespace adderkernel;

// Sparse blobs in [0, 1] shaped like MNIST digits; labels cycle 0..9.
inline Dataset random_digits(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> px(0.0f, 1.0f);
  Dataset d;
  d.sample_shape = {1, 28, 28};
  d.images.resize(n * 784);
  for (auto& v : d.images) {
    const float r = px(rng);
    v = r < 0.8f ? 0.0f : px(rng);
  }
  for (std::size_t i = 0; i < n; ++i) d.labels.push_back(static_cast<std::uint8_t>(i % 10));
  return d;
}

inline ModelBundle untrained(KernelKind kind, std::uint64_t seed = 3) {
  ModelBundle m;
  m.spec = build_lenet5(kind);
  m.float_params = train::init_params(m.spec, seed);
  return m;
}

inline ModelBundle quantized(KernelKind kind, int bits = 8) {
  return quantize_model(untrained(kind), random_digits(64, 17), bits).model;
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

inline std::vector<std::uint8_t> idx_images(std::uint32_t count, std::uint32_t rows,
                                            std::uint32_t cols,
                                            const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> b;
  put_be32(b, 0x803);
  put_be32(b, count);
  put_be32(b, rows);
  put_be32(b, cols);
  b.insert(b.end(), pixels.begin(), pixels.end());
  return b;
}

inline std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> b;
  put_be32(b, 0x801);
  put_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Tiny learnable digit set: class c lights up a bar at row 2 + 2c.
inline void write_mnist_dir(const std::filesystem::path& dir, std::uint32_t n_train,
                            std::uint32_t n_test, std::uint64_t seed = 1) {
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> noise(0, 40), cls(0, 9);
  const auto make = [&](std::uint32_t n, const char* img, const char* lab) {
    std::vector<std::uint8_t> px(std::size_t{n} * 784), labels(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      const int c = cls(rng);
      labels[i] = static_cast<std::uint8_t>(c);
      for (int k = 0; k < 784; ++k) px[i * 784 + k] = static_cast<std::uint8_t>(noise(rng));
      for (int x = 4; x < 24; ++x) px[i * 784 + (2 + 2 * c) * 28 + x] = 255;
    }
    write_bytes(dir / img, idx_images(n, 28, 28, px));
    write_bytes(dir / lab, idx_labels(labels));
  };
  make(n_train, "train-images-idx3-ubyte", "train-labels-idx1-ubyte");
  make(n_test, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");
}

}  // namespace fixtures
