// SPDX-License-Identifier: Apache-2.0
#include "cac/serialization.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>

#include "cac/errors.hpp"

namespace cac {
namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { little(v, 2); }
  void u32(std::uint32_t v) { little(v, 4); }
  void f64(double v) { little(std::bit_cast<std::uint64_t>(v), 8); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void little(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> in, const char* what) : in_(in), what_(what) {}
  bool done() const { return pos_ == in_.size(); }
  void magic(const char (&m)[5]) {
    need(4);
    if (std::memcmp(in_.data() + pos_, m, 4) != 0) throw IoError(std::string(what_) + ": bad magic, expected " + m);
    pos_ += 4;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(little(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(little(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(little(4)); }
  double f64() { return std::bit_cast<double>(little(8)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw IoError(std::string(what_) + ": truncated input at byte " + std::to_string(pos_));
  }
  std::uint64_t little(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  const char* what_;
  std::size_t pos_ = 0;
};

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw IoError(std::string(what) + " exceeds u32 range");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

// -- dataset -------------------------------------------------------------------

std::vector<std::uint8_t> encode_dataset(const DatasetFile& data) {
  Writer w;
  w.bytes("CACD", 4);
  w.u16(kDatasetFormatVersion);
  w.u32(checked_u32(data.samples.size(), "sample count"));
  w.u32(checked_u32(data.height, "height"));
  w.u32(checked_u32(data.width, "width"));
  w.u32(checked_u32(data.num_classes, "classes"));
  const std::size_t hw = data.height * data.width;
  for (const auto& s : data.samples) {
    if (s.image.size() != hw * kImageChannels || s.labels.values.size() != hw) {
      throw DimensionError("encode_dataset: sample does not match declared extents");
    }
    for (double v : s.image.data()) w.f64(v);
    for (auto l : s.labels.values) {
      if (l < 0 || l > std::numeric_limits<std::uint16_t>::max()) throw DataError("encode_dataset: label out of u16 range");
      w.u16(static_cast<std::uint16_t>(l));
    }
  }
  return w.take();
}

DatasetFile decode_dataset(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "CACD");
  r.magic("CACD");
  const auto version = r.u16();
  if (version != kDatasetFormatVersion) throw IoError("CACD: unsupported version " + std::to_string(version));
  DatasetFile d;
  const std::size_t count = r.u32();
  d.height = r.u32();
  d.width = r.u32();
  d.num_classes = r.u32();
  const std::size_t hw = d.height * d.width;
  d.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SegSample s{Tensor({kImageChannels, d.height, d.width}), LabelMap(1, d.height, d.width)};
    for (auto& v : s.image.data()) v = r.f64();
    for (std::size_t p = 0; p < hw; ++p) s.labels.values[p] = r.u16();
    d.samples.push_back(std::move(s));
  }
  if (!r.done()) throw IoError("CACD: trailing bytes after " + std::to_string(count) + " samples");
  return d;
}

void write_dataset(const std::filesystem::path& path, const DatasetFile& data) {
  write_file_bytes(path, encode_dataset(data));
}

DatasetFile read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file_bytes(path)); }

// -- checkpoint ------------------------------------------------------------------

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors) {
  Writer w;
  w.bytes("CACP", 4);
  w.u16(kCheckpointFormatVersion);
  for (const auto& t : tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) throw IoError("CACP: tensor name too long");
    if (t.tensor.rank() > std::numeric_limits<std::uint8_t>::max()) throw IoError("CACP: tensor rank too large");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.tensor.rank()));
    for (auto e : t.tensor.shape()) w.u32(checked_u32(e, "tensor extent"));
    for (double v : t.tensor.data()) w.f64(v);
  }
  return w.take();
}

std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "CACP");
  r.magic("CACP");
  const auto version = r.u16();
  if (version != kCheckpointFormatVersion) throw IoError("CACP: unsupported version " + std::to_string(version));
  std::vector<NamedTensor> out;
  while (!r.done()) {
    NamedTensor t;
    t.name = r.str(r.u16());
    Shape shape(r.u8());
    for (auto& e : shape) e = r.u32();
    Tensor tensor(shape);
    for (auto& v : tensor.data()) v = r.f64();
    t.tensor = std::move(tensor);
    out.push_back(std::move(t));
  }
  return out;
}

void write_checkpoint(const std::filesystem::path& path, std::span<const ParamRef> params) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(params.size());
  for (const auto& p : params) tensors.push_back({p.name, Tensor(p.tensor->shape(), p.tensor->values())});
  write_file_bytes(path, encode_checkpoint(tensors));
}

void read_checkpoint(const std::filesystem::path& path, std::span<const ParamRef> params) {
  std::map<std::string, Tensor> by_name;
  for (auto& t : decode_checkpoint(read_file_bytes(path))) by_name[t.name] = std::move(t.tensor);
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw IoError(path.string() + ": checkpoint lacks parameter '" + p.name + "'");
    if (it->second.shape() != p.tensor->shape()) {
      throw IoError(path.string() + ": parameter '" + p.name + "' has shape " + shape_to_string(it->second.shape()) +
                    ", model expects " + shape_to_string(p.tensor->shape()));
    }
    *p.tensor = std::move(it->second);
  }
}

// -- files -------------------------------------------------------------------

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace cac
