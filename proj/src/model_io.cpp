#include "adderkernel/model_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "adderkernel/errors.hpp"

namespace adderkernel {

std::uint32_t crc32(const std::uint8_t* data, std::size_t size) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { put(v, 4); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void signed_n(std::int64_t v, int bytes) { put(static_cast<std::uint64_t>(v), bytes); }
  void size(std::size_t v) { u32(static_cast<std::uint32_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64() { return get(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(get(8)); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::int64_t signed_n(int bytes) {
    const std::uint64_t v = get(bytes);
    const int shift = 64 - 8 * bytes;
    return static_cast<std::int64_t>(v << shift) >> shift;
  }
  // Bounded count: guards allocations against corrupt sizes.
  std::size_t count(std::size_t element_bytes) {
    const std::size_t n = u32();
    if (element_bytes && n > remaining() / element_bytes) {
      throw ModelTruncatedError("model: declared count exceeds remaining bytes");
    }
    return n;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  std::uint64_t get(int n) {
    if (remaining() < static_cast<std::size_t>(n)) {
      throw ModelTruncatedError("model: unexpected end of payload");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{data_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

void write_shape(Writer& w, const Shape& s) {
  w.size(s.size());
  for (auto d : s) w.size(d);
}

Shape read_shape(Reader& r) {
  Shape s(r.count(4));
  for (auto& d : s) d = r.u32();
  return s;
}

void write_format(Writer& w, const QFormat& q) {
  w.i32(q.bits);
  w.i32(q.frac_bits);
}

QFormat read_format(Reader& r) {
  QFormat q;
  q.bits = r.i32();
  q.frac_bits = r.i32();
  try {
    q.validate();
  } catch (const std::invalid_argument& e) {
    throw ModelFormatError(std::string("model: ") + e.what());
  }
  return q;
}

void write_conv(Writer& w, const ConvSpec& c) {
  for (auto v : {c.kernel_h, c.kernel_w, c.in_channels, c.out_channels, c.stride_h,
                 c.stride_w, c.pad_h, c.pad_w}) {
    w.size(v);
  }
}

ConvSpec read_conv(Reader& r, KernelKind kind) {
  ConvSpec c;
  c.kernel_h = r.u32();
  c.kernel_w = r.u32();
  c.in_channels = r.u32();
  c.out_channels = r.u32();
  c.stride_h = r.u32();
  c.stride_w = r.u32();
  c.pad_h = r.u32();
  c.pad_w = r.u32();
  c.kind = kind;
  return c;
}

int element_bytes(int bits) { return (bits + 7) / 8; }

}  // namespace

std::vector<std::uint8_t> serialize_model(const ModelBundle& model) {
  model.validate();
  Writer p;
  const NetworkSpec& spec = model.spec;
  p.u8(static_cast<std::uint8_t>(spec.kernel_kind));
  write_shape(p, spec.input_shape);
  p.size(spec.layers.size());
  for (const auto& l : spec.layers) {
    p.u8(static_cast<std::uint8_t>(l.kind));
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::fc:
        write_conv(p, l.conv);
        break;
      case LayerKind::pool:
        p.size(l.pool.window);
        p.size(l.pool.stride);
        p.u8(static_cast<std::uint8_t>(l.pool.mode));
        break;
      case LayerKind::batchnorm:
        p.size(l.channels);
        break;
      case LayerKind::relu:
      case LayerKind::flatten:
        break;
    }
  }
  for (const auto& layer : model.float_params) {
    p.size(layer.size());
    for (const auto& t : layer) {
      write_shape(p, t.shape);
      for (float v : t.data) p.f32(v);
    }
  }
  p.i32(model.quant_bits);
  if (model.is_quantized()) {
    for (const auto& q : model.quantized) {
      p.u8(static_cast<std::uint8_t>((q.kernel ? 1 : 0) | (q.batchnorm ? 2 : 0)));
      if (q.kernel) {
        write_format(p, q.kernel->input_format);
        const QTensor& wt = q.kernel->weight;
        write_format(p, wt.format);
        write_shape(p, wt.shape);
        const int eb = element_bytes(wt.format.bits);
        p.u8(static_cast<std::uint8_t>(eb));
        for (auto v : wt.data) p.signed_n(v, eb);
      }
      if (q.batchnorm) {
        const QuantizedBatchNorm& bn = *q.batchnorm;
        p.size(bn.mult.size());
        for (auto v : bn.mult) p.i64(v);
        for (auto v : bn.shift) p.i32(v);
        for (auto v : bn.bias) p.i64(v);
        write_format(p, bn.output_format);
      }
    }
  }

  Writer out;
  out.raw(kModelMagic, 4);
  out.u32(kModelVersion);
  out.u64(p.bytes().size());
  out.raw(p.bytes().data(), p.bytes().size());
  out.u32(crc32(out.bytes().data(), out.bytes().size()));
  return std::move(out.bytes());
}

ModelBundle deserialize_model(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t kHeader = 16;
  if (bytes.size() < 8) throw ModelTruncatedError("model: file shorter than its header");
  if (std::memcmp(bytes.data(), kModelMagic, 4) != 0) {
    throw ModelFormatError("model: bad magic, not an ADDN model file");
  }
  Reader head(bytes.data() + 4, bytes.size() - 4);
  const std::uint32_t version = head.u32();
  if (version != kModelVersion) {
    throw ModelVersionError("model: unsupported format version " + std::to_string(version) +
                            " (this build reads version " + std::to_string(kModelVersion) +
                            ")");
  }
  if (bytes.size() < kHeader) throw ModelTruncatedError("model: file shorter than its header");
  const std::uint64_t length = head.u64();
  if (bytes.size() - kHeader < 4 || length > bytes.size() - kHeader - 4) {
    throw ModelTruncatedError("model: payload of " + std::to_string(length) +
                              " bytes declared, file holds " +
                              std::to_string(bytes.size() - kHeader));
  }
  const std::size_t body = kHeader + static_cast<std::size_t>(length);
  if (bytes.size() != body + 4) {
    throw ModelFormatError("model: trailing bytes after checksum");
  }
  Reader tail(bytes.data() + body, 4);
  if (tail.u32() != crc32(bytes.data(), body)) {
    throw ModelChecksumError("model: CRC32 mismatch, file is corrupt");
  }

  Reader r(bytes.data() + kHeader, static_cast<std::size_t>(length));
  ModelBundle m;
  const std::uint8_t kind = r.u8();
  if (kind > 1) throw ModelFormatError("model: unknown kernel kind");
  m.spec.kernel_kind = static_cast<KernelKind>(kind);
  m.spec.input_shape = read_shape(r);
  m.spec.layers.resize(r.count(1));
  for (auto& l : m.spec.layers) {
    const std::uint8_t lk = r.u8();
    if (lk > static_cast<std::uint8_t>(LayerKind::flatten)) {
      throw ModelFormatError("model: unknown layer kind " + std::to_string(lk));
    }
    l.kind = static_cast<LayerKind>(lk);
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::fc:
        l.conv = read_conv(r, m.spec.kernel_kind);
        break;
      case LayerKind::pool: {
        l.pool.window = r.u32();
        l.pool.stride = r.u32();
        const std::uint8_t mode = r.u8();
        if (mode > 1) throw ModelFormatError("model: unknown pool mode");
        l.pool.mode = static_cast<PoolMode>(mode);
        break;
      }
      case LayerKind::batchnorm:
        l.channels = r.u32();
        break;
      case LayerKind::relu:
      case LayerKind::flatten:
        break;
    }
  }
  try {
    m.spec.validate();
  } catch (const ShapeError& e) {
    throw ModelFormatError(std::string("model: invalid network: ") + e.what());
  }

  m.float_params.resize(m.spec.layers.size());
  for (auto& layer : m.float_params) {
    layer.resize(r.count(4));
    for (auto& t : layer) {
      t.shape = read_shape(r);
      const std::size_t n = shape_size(t.shape);
      if (n > r.remaining() / 4) throw ModelTruncatedError("model: tensor data truncated");
      t.data.resize(n);
      for (auto& v : t.data) v = r.f32();
    }
  }
  m.quant_bits = r.i32();
  if (m.quant_bits < 0) throw ModelFormatError("model: negative quantization bits");
  if (m.is_quantized()) {
    m.quantized.resize(m.spec.layers.size());
    for (auto& q : m.quantized) {
      const std::uint8_t flags = r.u8();
      if (flags & 1) {
        QuantizedKernel k;
        k.input_format = read_format(r);
        k.weight.format = read_format(r);
        k.weight.shape = read_shape(r);
        const int eb = r.u8();
        if (eb != element_bytes(k.weight.format.bits)) {
          throw ModelFormatError("model: element width does not match declared bits");
        }
        const std::size_t n = shape_size(k.weight.shape);
        if (n > r.remaining() / static_cast<std::size_t>(eb)) {
          throw ModelTruncatedError("model: weight data truncated");
        }
        k.weight.data.resize(n);
        for (auto& v : k.weight.data) v = static_cast<std::int32_t>(r.signed_n(eb));
        q.kernel = std::move(k);
      }
      if (flags & 2) {
        QuantizedBatchNorm bn;
        const std::size_t c = r.count(20);
        bn.mult.resize(c);
        bn.shift.resize(c);
        bn.bias.resize(c);
        for (auto& v : bn.mult) v = r.i64();
        for (auto& v : bn.shift) v = r.i32();
        for (auto& v : bn.bias) v = r.i64();
        bn.output_format = read_format(r);
        q.batchnorm = std::move(bn);
      }
    }
  }
  if (r.remaining() != 0) throw ModelFormatError("model: unexpected bytes after payload");
  try {
    m.validate();
  } catch (const std::exception& e) {
    throw ModelFormatError(std::string("model: inconsistent bundle: ") + e.what());
  }
  return m;
}

void save_model(const ModelBundle& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                  std::istreambuf_iterator<char>()};
  return deserialize_model(bytes);
}

}  // namespace adderkernel
