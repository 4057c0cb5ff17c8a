#include "adderkernel/mnist.hpp"

#include <fstream>
#include <iterator>

#include "adderkernel/errors.hpp"

namespace adderkernel::mnist {

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

IdxImages parse_images(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16) throw DataError("IDX images: header truncated");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kImageMagic) {
    throw DataError("IDX images: bad magic " + hex(magic) + ", expected " + hex(kImageMagic));
  }
  IdxImages img;
  img.count = read_be32(bytes, 4);
  img.rows = read_be32(bytes, 8);
  img.cols = read_be32(bytes, 12);
  const std::uint64_t payload =
      std::uint64_t{img.count} * img.rows * img.cols;
  if (bytes.size() - 16 != payload) {
    throw DataError("IDX images: payload is " + std::to_string(bytes.size() - 16) +
                    " bytes, header declares " + std::to_string(payload));
  }
  img.pixels.assign(bytes.begin() + 16, bytes.end());
  return img;
}

std::vector<std::uint8_t> parse_labels(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw DataError("IDX labels: header truncated");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kLabelMagic) {
    throw DataError("IDX labels: bad magic " + hex(magic) + ", expected " + hex(kLabelMagic));
  }
  const std::uint32_t count = read_be32(bytes, 4);
  if (bytes.size() - 8 != count) {
    throw DataError("IDX labels: payload is " + std::to_string(bytes.size() - 8) +
                    " bytes, header declares " + std::to_string(count));
  }
  return {bytes.begin() + 8, bytes.end()};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

IdxImages read_images(const std::filesystem::path& path) {
  return parse_images(read_file(path));
}

std::vector<std::uint8_t> read_labels(const std::filesystem::path& path) {
  return parse_labels(read_file(path));
}

Dataset make_dataset(const IdxImages& images, std::vector<std::uint8_t> labels) {
  if (labels.size() != images.count) {
    throw DataError("IDX: " + std::to_string(images.count) + " images but " +
                    std::to_string(labels.size()) + " labels");
  }
  for (auto l : labels) {
    if (l > 9) throw DataError("IDX labels: value " + std::to_string(l) + " outside 0..9");
  }
  Dataset d;
  d.sample_shape = {1, images.rows, images.cols};
  d.images.resize(images.pixels.size());
  for (std::size_t i = 0; i < images.pixels.size(); ++i) {
    d.images[i] = static_cast<float>(images.pixels[i]) / 255.0f;
  }
  d.labels = std::move(labels);
  return d;
}

Dataset load_pair(const std::filesystem::path& images,
                  const std::filesystem::path& labels) {
  return make_dataset(read_images(images), read_labels(labels));
}

Split load_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("MNIST directory not found: " + dir.string());
  }
  return Split{load_pair(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
               load_pair(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte")};
}

}  // namespace adderkernel::mnist
