#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "paramrel/error.hpp"
#include "paramrel/io/idx.hpp"
#include "paramrel/nn/params.hpp"

namespace paramrel::io {

inline constexpr char kCheckpointMagic[4] = {'P', 'R', 'L', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout, all integers little-endian u32:
//   "PRLC" version count
//   per tensor: name_len name rank dims... f32 payload
//   footer: CRC32 of every byte before it
namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end) : b_(b), end_(end) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n) {
    need(n, "tensor name");
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

  float f32() {
    return std::bit_cast<float>(u32("tensor payload"));
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > end_) throw CorruptionError(std::string("checkpoint truncated while reading ") + what);
  }

  const std::vector<std::uint8_t>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const nn::ParamStore& store) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, t] : store) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  detail::put_u32(out, detail::crc32_of(out.data(), out.size()));
  return out;
}

inline nn::ParamStore decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16) throw CorruptionError("checkpoint too short (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw CorruptionError("not a checkpoint: bad magic");
  const std::size_t body = bytes.size() - 4;
  detail::Reader footer(bytes, bytes.size());
  (void)footer.str(body);
  const std::uint32_t stored = footer.u32("crc");
  if (stored != detail::crc32_of(bytes.data(), body)) throw CorruptionError("checkpoint CRC mismatch");

  detail::Reader r(bytes, body);
  (void)r.str(4);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CorruptionError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = r.u32("tensor count");
  nn::ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32("name length"));
    const std::uint32_t rank = r.u32("rank");
    nn::Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32("dimension"));
    nn::Tensor t(shape);
    for (double& v : t.data()) v = static_cast<double>(r.f32());
    if (store.contains(name)) throw CorruptionError("checkpoint repeats tensor '" + name + "'");
    store.add(name, std::move(t));
  }
  if (r.pos() != body) throw CorruptionError("checkpoint has unread bytes before the footer");
  return store;
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline void save_checkpoint(const nn::ParamStore& store, const std::string& path) { write_bytes(path, encode_checkpoint(store)); }

inline nn::ParamStore load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const CorruptionError& e) {
    throw CorruptionError(path + ": " + e.what());
  }
}

}  // namespace paramrel::io
