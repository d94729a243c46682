#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "paramrel/error.hpp"
#include "paramrel/nn/params.hpp"

namespace paramrel::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

// Bias-corrected Adam update applied in place.
inline void adam_step(ParamStore& params, const ParamGrads& grads, AdamState& state) {
  if (grads.size() != params.size()) {
    throw UsageError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw UsageError("adam_step: missing gradient for '" + name + "'");
    if (it->second.shape() != p.shape()) {
      throw UsageError("adam_step: gradient for '" + name + "' has shape " +
                       shape_str(it->second.shape()) + ", parameter is " + shape_str(p.shape()));
    }
  }

  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  for (auto& [name, p] : params) {
    const Tensor& gr = grads.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, p.shape());
    auto [vit, v_new] = state.v.try_emplace(name, p.shape());
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gr[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gr[i] * gr[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace paramrel::nn
