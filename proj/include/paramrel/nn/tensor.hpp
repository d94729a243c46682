#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "paramrel/error.hpp"

namespace paramrel::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor data size " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  bool empty() const noexcept { return data_.empty(); }

  // Matrix view helpers; a rank-1 tensor is treated as a single row.
  std::size_t rows() const noexcept { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept {
    if (shape_.empty()) return 1;
    return shape_.size() == 1 ? shape_[0] : data_.size() / shape_[0];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

// y = W x + b for a single input vector.
inline Tensor linear_forward(const Tensor& W, const Tensor& b, const Tensor& x) {
  if (W.rank() != 2 || b.rank() != 1 || x.rank() != 1 || W.dim(1) != x.dim(0) ||
      W.dim(0) != b.dim(0)) {
    throw DimensionError("linear_forward: W" + shape_str(W.shape()) + " b" + shape_str(b.shape()) +
                         " x" + shape_str(x.shape()));
  }
  const std::size_t out = W.dim(0), in = W.dim(1);
  Tensor y({out});
  for (std::size_t o = 0; o < out; ++o) {
    double acc = b[o];
    for (std::size_t i = 0; i < in; ++i) acc += W.at(o, i) * x[i];
    y[o] = acc;
  }
  return y;
}

// Standardizes each contiguous group of channels of a feature vector.
inline Tensor group_norm(const Tensor& x, std::size_t groups, double eps) {
  const std::size_t c = x.size();
  if (groups == 0 || c % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(c) + " channels not divisible by " +
                      std::to_string(groups) + " groups");
  }
  if (!(eps > 0.0)) throw ConfigError("group_norm: eps must be positive");
  const std::size_t g = c / groups;
  Tensor y(x.shape());
  for (std::size_t k = 0; k < groups; ++k) {
    double mean = 0.0;
    for (std::size_t j = 0; j < g; ++j) mean += x[k * g + j];
    mean /= static_cast<double>(g);
    double var = 0.0;
    for (std::size_t j = 0; j < g; ++j) var += (x[k * g + j] - mean) * (x[k * g + j] - mean);
    var /= static_cast<double>(g);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < g; ++j) y[k * g + j] = (x[k * g + j] - mean) * inv;
  }
  return y;
}

// Interleaved [sin, cos] pairs over geometrically spaced frequencies of the step fraction.
inline Tensor time_embed(double t_frac, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("time_embed: dim must be even and positive, got " + std::to_string(dim));
  }
  constexpr double kPhaseScale = 1000.0;
  constexpr double kMaxPeriod = 10000.0;
  const std::size_t half = dim / 2;
  Tensor e({dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(kMaxPeriod, -static_cast<double>(i) / static_cast<double>(half));
    const double phase = kPhaseScale * t_frac * freq;
    e[2 * i] = std::sin(phase);
    e[2 * i + 1] = std::cos(phase);
  }
  return e;
}

// Row-wise softmax over consecutive blocks of K entries.
inline Tensor softmax_groups(const Tensor& logits, std::size_t K) {
  if (K == 0 || logits.size() % K != 0) {
    throw DimensionError("softmax_groups: size " + std::to_string(logits.size()) +
                         " not a multiple of K=" + std::to_string(K));
  }
  Tensor p(logits.shape());
  for (std::size_t off = 0; off < logits.size(); off += K) {
    double mx = logits[off];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits[off + k]);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += (p[off + k] = std::exp(logits[off + k] - mx));
    for (std::size_t k = 0; k < K; ++k) p[off + k] /= z;
  }
  return p;
}

}  // namespace paramrel::nn
