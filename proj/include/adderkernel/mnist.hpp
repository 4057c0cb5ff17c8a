#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adderkernel/dataset.hpp"

namespace adderkernel::mnist {

inline constexpr std::uint32_t kImageMagic = 0x00000803;
inline constexpr std::uint32_t kLabelMagic = 0x00000801;

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;
};

// Big-endian IDX parsing. Any other magic, a truncated payload or trailing
// bytes raise DataError.
IdxImages parse_images(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> parse_labels(const std::vector<std::uint8_t>& bytes);

IdxImages read_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_labels(const std::filesystem::path& path);

// Pixels scaled to [0, 1]; shape [1, rows, cols].
Dataset make_dataset(const IdxImages& images, std::vector<std::uint8_t> labels);

struct Split {
  Dataset train;
  Dataset test;
};

// Standard file names (train-images-idx3-ubyte, ...) inside `dir`.
Split load_dir(const std::filesystem::path& dir);
Dataset load_pair(const std::filesystem::path& images,
                  const std::filesystem::path& labels);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace adderkernel::mnist
