#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "adderkernel/network.hpp"

namespace adderkernel {

// Model file layout (all integers little-endian):
//   "ADDN" | u32 version | u64 payload length | payload | u32 CRC32
// The CRC covers every byte before it. The payload holds the network spec,
// the float parameter table and, for quantized bundles, the per-layer
// formats, integer weights (stored at ceil(bits/8) bytes per element) and
// integer batch-norm parameters.
inline constexpr char kModelMagic[4] = {'A', 'D', 'D', 'N'};
inline constexpr std::uint32_t kModelVersion = 1;

class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ModelVersionError : public ModelFormatError {
 public:
  using ModelFormatError::ModelFormatError;
};
class ModelChecksumError : public ModelFormatError {
 public:
  using ModelFormatError::ModelFormatError;
};
class ModelTruncatedError : public ModelFormatError {
 public:
  using ModelFormatError::ModelFormatError;
};

std::vector<std::uint8_t> serialize_model(const ModelBundle& model);
ModelBundle deserialize_model(const std::vector<std::uint8_t>& bytes);

void save_model(const ModelBundle& model, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

std::uint32_t crc32(const std::uint8_t* data, std::size_t size);

}  // namespace adderkernel
