#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "paramrel/bfn.hpp"
#include "paramrel/error.hpp"
#include "paramrel/nn/autodiff.hpp"
#include "paramrel/nn/layers.hpp"
#include "paramrel/random.hpp"
#include "paramrel/schedule.hpp"

namespace paramrel {

using nn::Graph;
using nn::ParamStore;
using nn::Tensor;
using nn::Var;

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;
// Below this flow coefficient the continuous output estimate is taken as 0.
inline constexpr double kGammaMin = 1e-4;

struct ModelConfig {
  DataKind kind = DataKind::continuous;
  std::size_t data_dim = 64;  // D
  std::size_t classes = 2;    // K, discrete only
  std::size_t latent_dim = 8; // L
  std::size_t hidden = 128;
  std::size_t encoder_layers = 2;
  std::size_t decoder_blocks = 2;
  std::size_t groups = 4;
  std::size_t time_dim = 16;
  int T = 10;

  // Width of the per-example parameter features fed to both networks.
  std::size_t feature_dim() const { return kind == DataKind::continuous ? data_dim : data_dim * classes; }
  std::size_t output_dim() const { return feature_dim(); }

  void validate() const {
    if (latent_dim < 1) throw ConfigError("model.latent_dim must be >= 1");
    if (2 * latent_dim > data_dim) {
      throw ConfigError("model.latent_dim=" + std::to_string(latent_dim) + " exceeds half the data dimension " +
                        std::to_string(data_dim));
    }
    if (kind == DataKind::discrete && classes < 2) throw ConfigError("data.classes must be >= 2");
    if (hidden < 1 || encoder_layers < 1) throw ConfigError("model.hidden and model.encoder_layers must be >= 1");
    if (groups < 1) throw ConfigError("model.groups must be >= 1");
    if (hidden % nn::effective_groups(hidden, groups) != 0) {
      throw ConfigError("model.hidden=" + std::to_string(hidden) + " not divisible by model.groups=" +
                        std::to_string(groups));
    }
    if (time_dim == 0 || time_dim % 2 != 0) throw ConfigError("model.time_dim must be even and positive");
    if (T < 1) throw ConfigError("schedule.T must be >= 1");
  }
};

// Encoder output for a batch: rows are examples.
struct LatentGaussian {
  Tensor mean;    // [n x L]
  Tensor logvar;  // [n x L], clamped to [kLogvarMin, kLogvarMax]
};

// z = mean + exp(logvar/2) * eps
inline Tensor reparam_sample(const LatentGaussian& lg, Rng& rng) {
  Tensor z(lg.mean.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = lg.mean[i] + std::exp(0.5 * lg.logvar[i]) * rng.normal();
  return z;
}

// KL(N(mean, exp(logvar)) || N(0, I)) summed over all entries.
inline double kl_latent_prior(const LatentGaussian& lg) {
  nn::require_same_shape(lg.mean, lg.logvar, "kl_latent_prior");
  double s = 0.0;
  for (std::size_t i = 0; i < lg.mean.size(); ++i) {
    const double m = lg.mean[i], l = lg.logvar[i];
    s += std::exp(l) + m * m - 1.0 - l;
  }
  return 0.5 * s;
}

// xhat = mu/gamma - sqrt((1-gamma)/gamma) * eps_hat at step t.
inline Tensor output_estimate_continuous(const Tensor& mu, int t, const Tensor& eps_hat, const AccuracySchedule& sched) {
  nn::require_same_shape(mu, eps_hat, "output_estimate_continuous");
  const double gamma = sched.gamma_at(t);
  Tensor x(mu.shape());
  if (gamma <= kGammaMin) return x;
  const double c = std::sqrt((1.0 - gamma) / gamma);
  for (std::size_t i = 0; i < mu.size(); ++i) x[i] = mu[i] / gamma - c * eps_hat[i];
  return x;
}

// Self-encoder q(z_t | theta_t, t) and decoder psi(theta_t, z_t) over one ParamStore.
//
// Encoder: [features, time_embed] -> (Linear, SiLU) x encoder_layers -> Linear(2L).
// Decoder: Linear(features) then decoder_blocks residual blocks of
//   h += Linear(SiLU(AGN_t(AGN_z(h))))
// where AGN_c(h) = (1 + s(c)) GroupNorm(h) + b(c), then Linear(SiLU(h)) to the output.
// Both output heads start at zero, so a fresh model predicts eps_hat = 0,
// uniform class probabilities, and the prior latent.
class ParamRelModel {
 public:
  ParamRelModel(ModelConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t F = cfg_.feature_dim(), H = cfg_.hidden, L = cfg_.latent_dim;
    std::size_t in = F + cfg_.time_dim;
    for (std::size_t i = 0; i < cfg_.encoder_layers; ++i) {
      nn::add_linear(params_, "enc.l" + std::to_string(i), in, H, rng);
      in = H;
    }
    nn::add_linear(params_, "enc.out", H, 2 * L, rng, nn::Init::zeros);

    nn::add_linear(params_, "dec.in", F, H, rng);
    for (std::size_t i = 0; i < cfg_.decoder_blocks; ++i) {
      const std::string p = "dec.b" + std::to_string(i);
      nn::add_ada_gn(params_, p + ".agn_z", L, H, rng);
      nn::add_ada_gn(params_, p + ".agn_t", cfg_.time_dim, H, rng);
      nn::add_linear(params_, p + ".lin", H, H, rng);
    }
    nn::add_linear(params_, "dec.out", H, cfg_.output_dim(), rng, nn::Init::zeros);
  }

  // Wraps loaded weights; names and shapes must match the topology of cfg.
  ParamRelModel(ModelConfig cfg, ParamStore params) : cfg_(cfg) {
    Rng scratch(0);
    ParamRelModel reference(cfg, scratch);
    if (reference.params_.names() != params.names()) {
      throw ConfigError("checkpoint parameters do not match the configured model topology");
    }
    for (const auto& [name, t] : reference.params_) {
      if (params.at(name).shape() != t.shape()) {
        throw ConfigError("checkpoint parameter '" + name + "' has shape " + nn::shape_str(params.at(name).shape()) +
                          ", model expects " + nn::shape_str(t.shape()));
      }
    }
    params_ = std::move(params);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

  struct LatentVars {
    Var mean;
    Var logvar;
  };

  // features:[B x F], one step fraction t/T per row.
  LatentVars encode(Graph& g, const ParamStore& p, Var features, const std::vector<double>& t_fracs) const {
    check_features(features.value(), t_fracs.size());
    Var temb = g.constant(nn::time_embed_rows(t_fracs, cfg_.time_dim));
    Var h = nn::concat_cols(features, temb);
    for (std::size_t i = 0; i < cfg_.encoder_layers; ++i) h = nn::silu(nn::linear(g, p, "enc.l" + std::to_string(i), h));
    Var out = nn::linear(g, p, "enc.out", h);
    const std::size_t L = cfg_.latent_dim;
    return {nn::slice_cols(out, 0, L), nn::clamp(nn::slice_cols(out, L, L), kLogvarMin, kLogvarMax)};
  }

  // eps_hat:[B x D] for continuous data, logits:[B x D*K] for discrete data.
  Var decode(Graph& g, const ParamStore& p, Var features, Var z, const std::vector<double>& t_fracs) const {
    check_features(features.value(), t_fracs.size());
    if (z.value().rank() != 2 || z.value().dim(0) != t_fracs.size() || z.value().dim(1) != cfg_.latent_dim) {
      throw DimensionError("decode: latent has shape " + nn::shape_str(z.value().shape()));
    }
    Var temb = g.constant(nn::time_embed_rows(t_fracs, cfg_.time_dim));
    Var h = nn::linear(g, p, "dec.in", features);
    for (std::size_t i = 0; i < cfg_.decoder_blocks; ++i) {
      const std::string pre = "dec.b" + std::to_string(i);
      Var a = nn::ada_gn(g, p, pre + ".agn_z", h, z, cfg_.groups);
      a = nn::ada_gn(g, p, pre + ".agn_t", a, temb, cfg_.groups);
      h = nn::add(h, nn::linear(g, p, pre + ".lin", nn::silu(a)));
    }
    return nn::linear(g, p, "dec.out", nn::silu(h));
  }

  // Flattened per-example features of a batch of input parameters.
  Tensor features(const bfn::ContinuousParams& theta) const {
    require_kind(DataKind::continuous, "continuous features");
    return as_rows(theta.mu, cfg_.data_dim);
  }

  Tensor features(const bfn::DiscreteParams& theta) const {
    require_kind(DataKind::discrete, "discrete features");
    if (theta.K != cfg_.classes) throw ConfigError("discrete parameters have K=" + std::to_string(theta.K));
    return as_rows(theta.theta, cfg_.data_dim * cfg_.classes);
  }

  template <typename Params>
  LatentGaussian encode(const Params& theta, int t) const {
    Tensor f = features(theta);
    Graph g;
    auto lv = encode(g, params_, g.constant(f), fractions(f.dim(0), t));
    return {lv.mean.value(), lv.logvar.value()};
  }

  // Noise prediction eps_psi(theta_t, z_t), rows are examples.
  Tensor predict_noise(const bfn::ContinuousParams& theta, const Tensor& z, int t) const {
    require_kind(DataKind::continuous, "predict_noise");
    Tensor f = features(theta);
    Graph g;
    return decode(g, params_, g.constant(f), g.constant(z), fractions(f.dim(0), t)).value();
  }

  Tensor estimate_x(const bfn::ContinuousParams& theta, const Tensor& z, int t, const AccuracySchedule& sched) const {
    Tensor eps = predict_noise(theta, z, t);
    return output_estimate_continuous(features(theta), t, eps, sched);
  }

  // Class probabilities [n*D x K] of the output distribution.
  Tensor output_probs(const bfn::DiscreteParams& theta, const Tensor& z, int t) const {
    if (cfg_.kind != DataKind::discrete) throw UsageError("output_probs called on a continuous model");
    Tensor f = features(theta);
    Graph g;
    Tensor logits = decode(g, params_, g.constant(f), g.constant(z), fractions(f.dim(0), t)).value();
    return nn::softmax_groups(logits.reshaped({logits.size() / cfg_.classes, cfg_.classes}), cfg_.classes);
  }

  std::vector<double> fractions(std::size_t n, int t) const {
    return std::vector<double>(n, static_cast<double>(t) / static_cast<double>(cfg_.T));
  }

 private:
  void require_kind(DataKind k, const char* what) const {
    if (cfg_.kind != k) {
      throw UsageError(std::string(what) + " called on a " + to_string(cfg_.kind) + " model");
    }
  }

  static Tensor as_rows(const Tensor& t, std::size_t width) {
    if (t.size() % width != 0) {
      throw ConfigError("parameter tensor " + nn::shape_str(t.shape()) + " does not split into rows of " +
                        std::to_string(width));
    }
    return t.reshaped({t.size() / width, width});
  }

  void check_features(const Tensor& f, std::size_t rows) const {
    if (f.rank() != 2 || f.dim(1) != cfg_.feature_dim() || f.dim(0) != rows) {
      throw ConfigError("model expects features [" + std::to_string(rows) + "x" + std::to_string(cfg_.feature_dim()) +
                        "], got " + nn::shape_str(f.shape()));
    }
  }

  ModelConfig cfg_;
  ParamStore params_;
};

}  // namespace paramrel
