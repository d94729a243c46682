#pragma once

#include <map>
#include <string>
#include <vector>

#include "paramrel/error.hpp"
#include "paramrel/nn/tensor.hpp"

namespace paramrel::nn {

// Named parameter tensors, iterated in lexicographic name order.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value) {
    if (!tensors_.emplace(name, std::move(value)).second) {
      throw UsageError("duplicate parameter name '" + name + "'");
    }
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  const Tensor& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw UsageError("unknown parameter '" + name + "'");
    return it->second;
  }

  Tensor& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw UsageError("unknown parameter '" + name + "'");
    return it->second;
  }

  // Replaces a tensor's values; the shape fixed at add() time cannot change.
  void assign(const std::string& name, Tensor value) {
    Tensor& dst = at(name);
    if (dst.shape() != value.shape()) {
      throw DimensionError("parameter '" + name + "' has shape " + shape_str(dst.shape()) +
                           ", cannot assign " + shape_str(value.shape()));
    }
    dst = std::move(value);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [name, _] : tensors_) out.push_back(name);
    return out;
  }

  std::size_t size() const noexcept { return tensors_.size(); }
  bool empty() const noexcept { return tensors_.empty(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }

  friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.tensors_ == b.tensors_; }

 private:
  std::map<std::string, Tensor> tensors_;
};

// Gradients keyed by parameter name; same key set as the store they came from.
using ParamGrads = std::map<std::string, Tensor>;

}  // namespace paramrel::nn
