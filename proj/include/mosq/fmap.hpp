#pragma once

// FMAP: a little-endian container of named f32 tensors plus a JSON metadata block.
//
//   offset  size  field
//   0       4     magic "FMAP"
//   4       2     version (u16, currently 1)
//   6       2     reserved (u16, 0)
//   8       4     metadata byte length M (u32)
//   12      4     entry count N (u32)
//   16      M     metadata, UTF-8 JSON object (M may be 0)
//   ...           N entries:
//                   u16 name length, name bytes (UTF-8)
//                   u8 dtype (1 = f32), u8 ndim, ndim x u32 dims
//                   u64 byte offset of the tensor within the payload
//                 u64 payload byte length P
//                 P payload bytes (raw little-endian scalars)
//
// The file ends exactly at the end of the payload.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mosq/core.hpp"

namespace mosq {

inline constexpr std::uint16_t kFmapVersion = 1;
inline constexpr std::uint8_t kFmapDtypeF32 = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  bool operator==(const NamedTensor&) const = default;
};

struct FmapFile {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedTensor> entries;

  const NamedTensor* find(std::string_view name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

namespace detail {

class ByteWriter {
public:
  template <class U>
  void put(U v) {
    static_assert(std::is_integral_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
  }
  void put_bytes(std::string_view s) { buf.insert(buf.end(), s.begin(), s.end()); }
  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
  std::vector<std::uint8_t> buf;
};

class ByteReader {
public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

  template <class U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32_at(std::size_t at) const {
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[at + i]) << (8 * i);
    return std::bit_cast<float>(v);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw Error(ErrorKind::CorruptContainer, "truncated FMAP container");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> fmap_serialize(const FmapFile& file) {
  std::set<std::string_view> names;
  for (const auto& e : file.entries) {
    if (!names.insert(e.name).second) throw Error(ErrorKind::ConfigError, "duplicate FMAP entry name: " + e.name);
    if (e.name.size() > 0xffff) throw Error(ErrorKind::ConfigError, "FMAP entry name too long");
    if (e.dims.size() > 0xff) throw Error(ErrorKind::ConfigError, "FMAP entry rank too large");
    for (auto d : e.dims)
      if (d == 0) throw Error(ErrorKind::ConfigError, "FMAP dims must be positive: " + e.name);
    if (e.data.size() != e.numel()) throw Error(ErrorKind::ShapeMismatch, "FMAP entry data does not match dims: " + e.name);
  }
  const std::string meta = file.metadata.empty() ? std::string() : file.metadata.dump();
  detail::ByteWriter w;
  w.put_bytes("FMAP");
  w.put<std::uint16_t>(kFmapVersion);
  w.put<std::uint16_t>(0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(file.entries.size()));
  w.put_bytes(meta);
  std::uint64_t offset = 0;
  for (const auto& e : file.entries) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.put_bytes(e.name);
    w.put<std::uint8_t>(kFmapDtypeF32);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) w.put<std::uint32_t>(d);
    w.put<std::uint64_t>(offset);
    offset += e.data.size() * 4;
  }
  w.put<std::uint64_t>(offset);
  for (const auto& e : file.entries)
    for (float f : e.data) w.put_f32(f);
  return std::move(w.buf);
}

inline FmapFile fmap_parse(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.get_string(4) != "FMAP") throw Error(ErrorKind::CorruptContainer, "bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kFmapVersion) throw Error(ErrorKind::CorruptContainer, "unsupported FMAP version " + std::to_string(version));
  r.get<std::uint16_t>();
  const auto meta_len = r.get<std::uint32_t>();
  const auto count = r.get<std::uint32_t>();
  FmapFile file;
  const std::string meta = r.get_string(meta_len);
  if (!meta.empty()) {
    file.metadata = nlohmann::json::parse(meta, nullptr, false);
    if (file.metadata.is_discarded() || !file.metadata.is_object()) {
      throw Error(ErrorKind::CorruptContainer, "metadata is not a JSON object");
    }
  }

  struct Slot {
    std::uint64_t offset, length;
  };
  std::vector<Slot> slots;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    e.name = r.get_string(r.get<std::uint16_t>());
    if (!names.insert(e.name).second) throw Error(ErrorKind::CorruptContainer, "duplicate entry name " + e.name);
    if (r.get<std::uint8_t>() != kFmapDtypeF32) throw Error(ErrorKind::CorruptContainer, "unsupported dtype in " + e.name);
    const auto ndim = r.get<std::uint8_t>();
    std::uint64_t n = 1;
    for (int d = 0; d < ndim; ++d) {
      e.dims.push_back(r.get<std::uint32_t>());
      if (e.dims.back() == 0) throw Error(ErrorKind::CorruptContainer, "zero dim in " + e.name);
      n *= e.dims.back();
      if (n > (std::uint64_t{1} << 40)) throw Error(ErrorKind::CorruptContainer, "entry too large: " + e.name);
    }
    slots.push_back({r.get<std::uint64_t>(), n * 4});
    file.entries.push_back(std::move(e));
  }
  const auto payload_len = r.get<std::uint64_t>();
  if (payload_len != r.remaining()) throw Error(ErrorKind::CorruptContainer, "payload length does not match file size");
  std::uint64_t total = 0;
  for (const auto& s : slots) total += s.length;
  if (total != payload_len) throw Error(ErrorKind::CorruptContainer, "payload length does not match entry table");

  std::vector<std::size_t> order(slots.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return slots[a].offset < slots[b].offset; });
  std::uint64_t end = 0;
  for (auto i : order) {
    if (slots[i].offset < end || slots[i].offset > payload_len ||
        slots[i].length > payload_len - slots[i].offset) {
      throw Error(ErrorKind::CorruptContainer, "overlapping or out-of-range entry " + file.entries[i].name);
    }
    end = slots[i].offset + slots[i].length;
  }

  const std::size_t base = r.pos();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    auto& e = file.entries[i];
    e.data.resize(slots[i].length / 4);
    for (std::size_t k = 0; k < e.data.size(); ++k) e.data[k] = r.f32_at(base + slots[i].offset + k * 4);
  }
  return file;
}

/// Writes through a temporary file and renames it into place.
inline void fmap_write(const FmapFile& file, const std::filesystem::path& path) {
  const auto bytes = fmap_serialize(file);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::IoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IoError, "rename to " + path.string() + ": " + ec.message());
}

inline FmapFile fmap_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return fmap_parse(bytes);
}

/// SHA-256 of the serialized container; stable across runs and machines.
inline std::string fmap_digest(const FmapFile& file) { return sha256_hex(fmap_serialize(file)); }

}  // namespace mosq
