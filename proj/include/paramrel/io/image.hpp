#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "paramrel/error.hpp"
#include "paramrel/io/checkpoint.hpp"
#include "paramrel/nn/tensor.hpp"

namespace paramrel::io {

// Binary PGM of one grayscale image [height x width]; values in [lo, hi]
// map linearly onto 0..255.
inline std::vector<std::uint8_t> encode_pgm(const nn::Tensor& image, double lo = -1.0, double hi = 1.0) {
  if (image.rank() != 2) throw DimensionError("encode_pgm expects [height x width], got " + nn::shape_str(image.shape()));
  if (!(hi > lo)) throw UsageError("encode_pgm: hi must exceed lo");
  const std::string header = "P5\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (double v : image.data()) {
    if (!std::isfinite(v)) throw DataError("encode_pgm: nonfinite pixel value");
    const double u = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
    out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * u)));
  }
  return out;
}

inline void write_pgm(const nn::Tensor& image, const std::string& path, double lo = -1.0, double hi = 1.0) {
  write_bytes(path, encode_pgm(image, lo, hi));
}

// Lays out n square images (rows of a [n x side*side] tensor) on a grid of
// `columns` tiles separated by a one-pixel border at value `border`.
inline nn::Tensor tile_images(const nn::Tensor& samples, std::size_t side, std::size_t columns, double border) {
  const std::size_t n = samples.size() / (side * side);
  if (n == 0 || n * side * side != samples.size()) throw DimensionError("tile_images: samples are not whole " + std::to_string(side) + "x" + std::to_string(side) + " images");
  columns = std::max<std::size_t>(1, std::min(columns, n));
  const std::size_t grid_rows = (n + columns - 1) / columns;
  const std::size_t H = grid_rows * (side + 1) + 1, W = columns * (side + 1) + 1;
  nn::Tensor img({H, W}, border);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t oy = (k / columns) * (side + 1) + 1, ox = (k % columns) * (side + 1) + 1;
    for (std::size_t r = 0; r < side; ++r)
      for (std::size_t c = 0; c < side; ++c) img.at(oy + r, ox + c) = samples[k * side * side + r * side + c];
  }
  return img;
}

// RFC 4180 field: quoted when it holds a comma, quote, CR or LF.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using CsvRow = std::vector<std::string>;

inline std::string encode_csv(const CsvRow& header, const std::vector<CsvRow>& rows) {
  std::string out;
  auto line = [&](const CsvRow& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) out += ',';
      out += csv_field(r[i]);
    }
    out += "\r\n";
  };
  line(header);
  for (const CsvRow& r : rows) {
    if (r.size() != header.size()) throw DimensionError("csv row has " + std::to_string(r.size()) + " fields, header has " + std::to_string(header.size()));
    line(r);
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline void write_csv(const std::string& path, const CsvRow& header, const std::vector<CsvRow>& rows) {
  write_text(path, encode_csv(header, rows));
}

}  // namespace paramrel::io
