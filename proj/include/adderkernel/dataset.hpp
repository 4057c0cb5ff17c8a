#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "adderkernel/fixed_point.hpp"

namespace adderkernel {

// Labelled samples stored contiguously, each of `sample_shape`.
struct Dataset {
  Shape sample_shape;
  std::vector<float> images;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return shape_size(sample_shape); }
  std::span<const float> image(std::size_t i) const {
    return {images.data() + i * sample_size(), sample_size()};
  }
  // First `n` samples (or all, if fewer).
  Dataset head(std::size_t n) const;
};

}  // namespace adderkernel
