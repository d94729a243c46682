#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "paramrel/error.hpp"
#include "paramrel/nn/tensor.hpp"
#include "paramrel/schedule.hpp"

namespace paramrel::io {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> values;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace detail {

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off, const char* field) {
  if (off + 4 > b.size()) throw FormatError(std::string("IDX file truncated while reading ") + field, b.size());
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace detail

// Big-endian IDX container of unsigned bytes with the expected magic.
inline IdxArray parse_idx(const std::vector<std::uint8_t>& bytes, std::uint32_t expected_magic) {
  const std::uint32_t magic = detail::read_be32(bytes, 0, "magic");
  if (magic != expected_magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "IDX magic 0x%08x, expected 0x%08x", magic, expected_magic);
    throw FormatError(buf, 0);
  }
  IdxArray a;
  const std::size_t rank = magic & 0xffu;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    a.dims.push_back(detail::read_be32(bytes, 4 + 4 * i, "dimension"));
    count *= a.dims.back();
  }
  const std::size_t start = 4 + 4 * rank;
  if (bytes.size() < start + count) {
    throw FormatError("IDX payload truncated: expected " + std::to_string(count) + " bytes after the header, found " +
                          std::to_string(bytes.size() - start),
                      bytes.size());
  }
  if (bytes.size() > start + count) throw FormatError("IDX file has trailing bytes", start + count);
  a.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end());
  return a;
}

// Continuous: byte / 255 mapped to [-1, 1]. Discrete: 1 when byte / 255 >= 0.5.
inline nn::Tensor idx_images_to_tensor(const IdxArray& a, DataKind kind) {
  if (a.dims.size() != 3) throw FormatError("image IDX must have 3 dimensions", 3);
  const std::size_t N = a.dims[0], D = std::size_t{a.dims[1]} * a.dims[2];
  nn::Tensor x({N, D});
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double u = a.values[i] / 255.0;
    x[i] = kind == DataKind::continuous ? 2.0 * u - 1.0 : (u >= 0.5 ? 1.0 : 0.0);
  }
  return x;
}

struct IdxDataset {
  nn::Tensor samples;  // [N x rows*cols]
  std::size_t rows = 0, cols = 0;
  std::optional<std::vector<int>> labels;
};

inline IdxDataset load_idx(const std::string& images_path, DataKind kind, const std::string& labels_path = "") {
  IdxArray img;
  try {
    img = parse_idx(read_file(images_path), kIdxImageMagic);
  } catch (const FormatError& e) {
    throw FormatError(images_path + ": " + e.what(), e.offset());
  }
  IdxDataset ds{idx_images_to_tensor(img, kind), img.dims[1], img.dims[2], std::nullopt};
  if (!labels_path.empty()) {
    IdxArray lab = parse_idx(read_file(labels_path), kIdxLabelMagic);
    if (lab.dims.size() != 1 || lab.dims[0] != img.dims[0]) {
      throw FormatError(labels_path + ": label count does not match image count", 4);
    }
    ds.labels = std::vector<int>(lab.values.begin(), lab.values.end());
  }
  return ds;
}

}  // namespace paramrel::io
