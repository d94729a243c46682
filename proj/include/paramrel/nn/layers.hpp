#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "paramrel/nn/autodiff.hpp"
#include "paramrel/random.hpp"

namespace paramrel::nn {

inline constexpr double kGroupNormEps = 1e-5;

// Groups used for a layer of `channels` width given the configured default.
inline std::size_t effective_groups(std::size_t channels, std::size_t configured) {
  if (channels < 4) return 1;
  return configured;
}

enum class Init { kaiming_uniform, zeros };

// Registers `<prefix>.W` [out x in] and `<prefix>.b` [out].
inline void add_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                       Rng& rng, Init init = Init::kaiming_uniform) {
  Tensor W({out, in});
  if (init == Init::kaiming_uniform) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    for (double& w : W.data()) w = bound * (2.0 * rng.uniform() - 1.0);
  }
  store.add(prefix + ".W", std::move(W));
  store.add(prefix + ".b", Tensor({out}));
}

inline Var linear(Graph& g, const ParamStore& store, const std::string& prefix, Var x) {
  return linear(x, g.param(store, prefix + ".W"), g.param(store, prefix + ".b"));
}

// Conditioning nets `<prefix>.scale` and `<prefix>.shift` map cond -> channels.
// Zero initialization makes a fresh layer reduce to plain GroupNorm.
inline void add_ada_gn(ParamStore& store, const std::string& prefix, std::size_t cond_dim,
                       std::size_t channels, Rng& rng) {
  add_linear(store, prefix + ".scale", cond_dim, channels, rng, Init::zeros);
  add_linear(store, prefix + ".shift", cond_dim, channels, rng, Init::zeros);
}

inline Var ada_gn(Graph& g, const ParamStore& store, const std::string& prefix, Var h, Var cond,
                  std::size_t groups) {
  Var s = linear(g, store, prefix + ".scale", cond);
  Var b = linear(g, store, prefix + ".shift", cond);
  const Tensor& hv = h.value();
  if (s.value().shape() != hv.shape()) {
    throw DimensionError("ada_gn: conditioning produces " + shape_str(s.value().shape()) +
                         " for features " + shape_str(hv.shape()));
  }
  return ada_gn(h, s, b, effective_groups(hv.cols(), groups), kGroupNormEps);
}

// Stack of per-row time embeddings, one row per step fraction.
inline Tensor time_embed_rows(const std::vector<double>& t_fracs, std::size_t dim) {
  Tensor out({t_fracs.size(), dim});
  for (std::size_t r = 0; r < t_fracs.size(); ++r) {
    Tensor e = time_embed(t_fracs[r], dim);
    std::copy(e.data().begin(), e.data().end(), out.row(r).begin());
  }
  return out;
}

}  // namespace paramrel::nn
