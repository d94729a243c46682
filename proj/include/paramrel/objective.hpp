#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "paramrel/bfn.hpp"
#include "paramrel/error.hpp"
#include "paramrel/model.hpp"
#include "paramrel/nn/autodiff.hpp"
#include "paramrel/schedule.hpp"

namespace paramrel {

// Weights of the MI-augmented objective. mi_weight is the objective-level
// MI coefficient, distinct from the schedule's gamma(t).
struct LossWeights {
  double mi_weight = 0.95;
  double tc_weight = 0.1;
  int T = 10;

  double rate_coefficient() const { return (1.0 - mi_weight) / static_cast<double>(T); }
  double mmd_coefficient() const { return (mi_weight + tc_weight - 1.0) / static_cast<double>(T); }

  void validate() const {
    if (!(mi_weight >= 0.0 && mi_weight < 1.0)) throw ConfigError("loss.mi_weight must lie in [0,1)");
    if (!(tc_weight > 0.0)) throw ConfigError("loss.tc_weight must be positive");
    if (T < 1) throw ConfigError("schedule.T must be >= 1");
  }

  // A negative MMD coefficient rewards divergence from the prior.
  bool mmd_coefficient_negative() const { return mmd_coefficient() < 0.0; }
};

struct LossBreakdown {
  double flow_kl = 0.0;
  double latent_rate = 0.0;
  double mmd = 0.0;
  double distortion_nll = 0.0;
  double total = 0.0;
};

inline double recompute_total(const LossBreakdown& b, double rate_coef, double mmd_coef) {
  return b.flow_kl + rate_coef * b.latent_rate + mmd_coef * b.mmd + b.distortion_nll;
}

inline double rbf_kernel(std::span<const double> a, std::span<const double> b, double bandwidth) {
  if (a.size() != b.size()) throw DimensionError("rbf_kernel: vector lengths differ");
  if (!(bandwidth > 0.0)) throw UsageError("rbf_kernel: bandwidth must be positive");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-sq / (2.0 * bandwidth * bandwidth));
}

namespace detail {

inline void require_mmd_inputs(const Tensor& q, const Tensor& p) {
  if (q.rank() != 2 || p.rank() != 2 || q.dim(1) != p.dim(1)) {
    throw DimensionError("mmd: samples " + nn::shape_str(q.shape()) + " and " + nn::shape_str(p.shape()));
  }
  if (q.dim(0) < 2 || p.dim(0) < 2) throw UsageError("mmd needs at least 2 samples on each side");
}

inline double mean_kernel(const Tensor& a, const Tensor& b, double bw) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(0); ++j) s += rbf_kernel(a.row(i), b.row(j), bw);
  return s / static_cast<double>(a.dim(0) * b.dim(0));
}

}  // namespace detail

// V-statistic E_pp'[k] - 2 E_qp'[k] + E_qq'[k], diagonal terms included.
inline double mmd(const Tensor& q_samples, const Tensor& p_samples, double bandwidth) {
  detail::require_mmd_inputs(q_samples, p_samples);
  return detail::mean_kernel(p_samples, p_samples, bandwidth) - 2.0 * detail::mean_kernel(q_samples, p_samples, bandwidth) +
         detail::mean_kernel(q_samples, q_samples, bandwidth);
}

// Bandwidth sqrt(median squared distance / 2) over the pooled samples.
inline double median_bandwidth(const Tensor& q, const Tensor& p) {
  detail::require_mmd_inputs(q, p);
  std::vector<const Tensor*> sets{&q, &p};
  std::vector<std::span<const double>> rows;
  for (const Tensor* s : sets)
    for (std::size_t i = 0; i < s->dim(0); ++i) rows.push_back(s->row(i));
  std::vector<double> d2;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < rows[i].size(); ++k) s += (rows[i][k] - rows[j][k]) * (rows[i][k] - rows[j][k]);
      d2.push_back(s);
    }
  std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(d2.size() / 2), d2.end());
  const double med = d2[d2.size() / 2];
  return med > 0.0 ? std::sqrt(med / 2.0) : 1.0;
}

// Differentiable MMD with respect to both sample sets.
inline Var mmd_rbf(Var q, Var p, double bandwidth) {
  const Tensor& qv = q.value();
  const Tensor& pv = p.value();
  const double value = mmd(qv, pv, bandwidth);
  const std::size_t n = qv.dim(0), m = pv.dim(0), L = qv.dim(1);
  const std::size_t qi = q.id, pi = p.id;
  if (q.graph != p.graph) throw UsageError("mmd_rbf: operands belong to different graphs");
  return q.graph->record(Tensor({1}, {value}), {qi, pi}, [=](Graph& g, std::size_t self) {
    const double gy = g.grad(self)[0];
    const Tensor& qv = g.value(qi);
    const Tensor& pv = g.value(pi);
    const double inv_bw2 = 1.0 / (bandwidth * bandwidth);
    // d/da k(a,b) = -k(a,b) (a - b) / bw^2
    auto accumulate = [&](const Tensor& a, const Tensor& b, double coef, Tensor* ga) {
      for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < b.dim(0); ++j) {
          const double k = rbf_kernel(a.row(i), b.row(j), bandwidth);
          for (std::size_t d = 0; d < L; ++d) (*ga)[i * L + d] += coef * (-k) * (a[i * L + d] - b[j * L + d]) * inv_bw2;
        }
    };
    const auto nn_ = static_cast<double>(n * n), mm = static_cast<double>(m * m), nm = static_cast<double>(n * m);
    if (Tensor* gq = g.grad_buffer(qi)) {
      // E_qq' contributes through both arguments.
      accumulate(qv, qv, 2.0 * gy / nn_, gq);
      accumulate(qv, pv, -2.0 * gy / nm, gq);
    }
    if (Tensor* gp = g.grad_buffer(pi)) {
      accumulate(pv, pv, 2.0 * gy / mm, gp);
      accumulate(pv, qv, -2.0 * gy / nm, gp);
    }
  });
}

// Inputs of the unweighted single-step ELBO for one example.
struct ElboStepInputs {
  int t = 1;                      // sampled step in [1, T]
  LatentGaussian latent;          // q(z_t | theta_t, t)
  double flow_kl_single = 0.0;    // KL(p_S || p_R) at alpha_t, before the T multiplier
  double distortion = 0.0;        // L^D evaluated at t = 0
};

// Per-step terms that estimate a sum over t are multiplied by T, so the
// single-step estimate is unbiased for the T-term sum when t ~ U{1..T}.
inline LossBreakdown elbo_step_loss(const ElboStepInputs& in, const AccuracySchedule& sched) {
  if (in.t < 1 || in.t > sched.T()) throw UsageError("elbo_step_loss: t must lie in [1, T]");
  const auto T = static_cast<double>(sched.T());
  LossBreakdown b;
  b.flow_kl = T * in.flow_kl_single;
  b.latent_rate = T * kl_latent_prior(in.latent);
  b.distortion_nll = in.distortion;
  b.total = b.flow_kl + b.latent_rate + b.distortion_nll;
  return b;
}

// Continuous per-step flow KL for one example: (alpha_t/2) ||x0 - xhat||^2.
inline double continuous_step_kl(const Tensor& x0, const Tensor& xhat, int t, const AccuracySchedule& sched) {
  return bfn::kl_sender_receiver_continuous(x0, xhat, sched.alpha_at(t));
}

// Weighted combination of already-averaged batch terms.
inline LossBreakdown paramrel_plus_loss(const LossBreakdown& batch_terms, const Tensor& z_batch, const Tensor& prior_batch,
                                        const LossWeights& w, double bandwidth) {
  if (z_batch.rank() != 2 || z_batch.dim(0) < 2) throw UsageError("paramrel_plus_loss needs a batch of at least 2");
  LossBreakdown b = batch_terms;
  b.mmd = static_cast<double>(w.T) * mmd(z_batch, prior_batch, bandwidth);
  b.total = recompute_total(b, w.rate_coefficient(), w.mmd_coefficient());
  return b;
}

enum class MmdKernel { rbf, median_rbf };

struct ObjectiveConfig {
  LossWeights weights;
  MmdKernel kernel = MmdKernel::rbf;
  double bandwidth = 0.0;  // 0 selects sqrt(L)
  std::size_t n_mc = 16;   // discrete mixture-KL draws per example

  double resolve_bandwidth(std::size_t latent_dim, const Tensor& q, const Tensor& p) const {
    if (kernel == MmdKernel::median_rbf) return median_bandwidth(q, p);
    return bandwidth > 0.0 ? bandwidth : std::sqrt(static_cast<double>(latent_dim));
  }
};

// Data and every random draw needed to evaluate one minibatch loss. With the
// draws fixed, the loss is a deterministic function of the weights.
struct BatchDraws {
  std::vector<int> t;          // per example, in [1, T]
  Tensor x0;                   // continuous [B x D]
  std::vector<int> classes;    // discrete, B*D
  bfn::ContinuousParams flow_t;  // continuous theta_t, mu:[B x D]
  bfn::ContinuousParams flow_0;
  bfn::DiscreteParams dflow_t;   // discrete theta_t, [B*D x K]
  bfn::DiscreteParams dflow_0;
  std::vector<Tensor> sender_draws;  // discrete, each [B x D*K]
  Tensor eps_t;                // [B x L]
  Tensor eps_0;                // [B x L]
  Tensor prior_z;              // [B x L]

  std::size_t batch() const { return t.size(); }
};

// rows: [B x D] continuous data or B*D discrete class indices given as doubles.
inline BatchDraws draw_batch(const ModelConfig& cfg, const AccuracySchedule& sched, const Tensor& rows,
                             std::size_t n_mc, Rng& rng) {
  if (rows.rank() != 2 || rows.dim(1) != cfg.data_dim) {
    throw DimensionError("draw_batch: expected [B x " + std::to_string(cfg.data_dim) + "] data, got " +
                         nn::shape_str(rows.shape()));
  }
  const std::size_t B = rows.dim(0), D = cfg.data_dim, L = cfg.latent_dim;
  BatchDraws d;
  d.t.resize(B);
  for (auto& t : d.t) t = rng.integer(1, sched.T());
  auto noise = [&](std::size_t r, std::size_t c) {
    Tensor e({r, c});
    for (double& v : e.data()) v = rng.normal();
    return e;
  };
  if (cfg.kind == DataKind::continuous) {
    d.x0 = rows;
    d.flow_t = {Tensor({B, D}), 0.0};
    d.flow_0 = {Tensor({B, D}), 0.0};
    for (std::size_t b = 0; b < B; ++b) {
      Tensor xb({D}, std::vector<double>(rows.row(b).begin(), rows.row(b).end()));
      auto ft = bfn::sample_flow_continuous(xb, d.t[b], sched, rng);
      auto f0 = bfn::sample_flow_continuous(xb, 0, sched, rng);
      std::copy(ft.mu.data().begin(), ft.mu.data().end(), d.flow_t.mu.row(b).begin());
      std::copy(f0.mu.data().begin(), f0.mu.data().end(), d.flow_0.mu.row(b).begin());
    }
  } else {
    const std::size_t K = cfg.classes;
    d.classes.resize(B * D);
    for (std::size_t i = 0; i < B * D; ++i) d.classes[i] = static_cast<int>(std::lround(rows[i]));
    bfn::require_classes(d.classes, K);
    d.dflow_t = {Tensor({B * D, K}), K};
    d.dflow_0 = {Tensor({B * D, K}), K};
    d.sender_draws.assign(n_mc, Tensor({B, D * K}));
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<int> cb(d.classes.begin() + static_cast<std::ptrdiff_t>(b * D),
                          d.classes.begin() + static_cast<std::ptrdiff_t>((b + 1) * D));
      auto ft = bfn::sample_flow_discrete(cb, d.t[b], sched, K, rng);
      auto f0 = bfn::sample_flow_discrete(cb, 0, sched, K, rng);
      std::copy(ft.theta.data().begin(), ft.theta.data().end(), d.dflow_t.theta.data().begin() + static_cast<std::ptrdiff_t>(b * D * K));
      std::copy(f0.theta.data().begin(), f0.theta.data().end(), d.dflow_0.theta.data().begin() + static_cast<std::ptrdiff_t>(b * D * K));
      const double alpha = sched.alpha_at(d.t[b]);
      for (auto& draw : d.sender_draws) {
        auto y = bfn::sample_sender_discrete(cb, alpha, K, rng);
        std::copy(y.y.data().begin(), y.y.data().end(), draw.row(b).begin());
      }
    }
  }
  d.eps_t = noise(B, L);
  d.eps_0 = noise(B, L);
  d.prior_z = noise(B, L);
  return d;
}

struct BatchLoss {
  Var total;
  LossBreakdown parts;
  Tensor z_t;  // reparameterized latents of the batch at the sampled steps
};

// Minibatch training objective: batch means of the T-scaled flow KL and
// latent rate, T-scaled MMD between the batch latents and prior draws, and
// the t = 0 distortion (MSE for continuous data, cross-entropy for discrete).
inline BatchLoss batch_loss(Graph& g, const ParamRelModel& model, const ParamStore& params, const BatchDraws& d,
                            const ObjectiveConfig& obj, const AccuracySchedule& sched) {
  const ModelConfig& cfg = model.config();
  const std::size_t B = d.batch();
  if (B < 2) throw UsageError("batch size must be >= 2 for the MMD term");
  const auto T = static_cast<double>(sched.T());
  std::vector<double> frac_t(B), frac_0(B, 0.0);
  for (std::size_t b = 0; b < B; ++b) frac_t[b] = sched.step_fraction(d.t[b]);

  const bool continuous = cfg.kind == DataKind::continuous;
  Var feat_t = g.constant(continuous ? model.features(d.flow_t) : model.features(d.dflow_t));
  Var feat_0 = g.constant(continuous ? model.features(d.flow_0) : model.features(d.dflow_0));

  auto reparam = [&](const ParamRelModel::LatentVars& lv, const Tensor& eps) {
    return nn::add(lv.mean, nn::mul(nn::exp(nn::scale(lv.logvar, 0.5)), g.constant(eps)));
  };

  auto lat_t = model.encode(g, params, feat_t, frac_t);
  Var z_t = reparam(lat_t, d.eps_t);
  auto lat_0 = model.encode(g, params, feat_0, frac_0);
  Var z_0 = reparam(lat_0, d.eps_0);

  Var out_t = model.decode(g, params, feat_t, z_t, frac_t);
  Var out_0 = model.decode(g, params, feat_0, z_0, frac_0);

  Var flow, dist;
  if (continuous) {
    // xhat = mu/gamma - sqrt((1-gamma)/gamma) eps_hat, row-wise gamma.
    auto estimate = [&](Var eps_hat, const Tensor& mu, const std::vector<int>& steps) {
      Tensor base(mu.shape());
      std::vector<double> coef(B, 0.0);
      const std::size_t D = cfg.data_dim;
      for (std::size_t b = 0; b < B; ++b) {
        const double gamma = sched.gamma_at(steps[b]);
        if (gamma <= kGammaMin) continue;
        coef[b] = -std::sqrt((1.0 - gamma) / gamma);
        for (std::size_t j = 0; j < D; ++j) base[b * D + j] = mu[b * D + j] / gamma;
      }
      return nn::add(g.constant(std::move(base)), nn::scale_rows(eps_hat, std::move(coef)));
    };
    Var x0 = g.constant(d.x0);
    Var xhat_t = estimate(out_t, d.flow_t.mu, d.t);
    std::vector<double> kl_coef(B);
    for (std::size_t b = 0; b < B; ++b) kl_coef[b] = T * 0.5 * sched.alpha_at(d.t[b]);
    flow = nn::mean(nn::scale_rows(nn::sum_cols(nn::square(nn::sub(x0, xhat_t))), kl_coef));
    Var xhat_0 = estimate(out_0, d.flow_0.mu, std::vector<int>(B, 0));
    dist = nn::mean(nn::square(nn::sub(x0, xhat_0)));
  } else {
    flow = nn::scale(nn::mean(nn::discrete_flow_kl_rows(out_t, d.sender_draws, d.classes, cfg.classes)), T);
    dist = nn::mean(nn::categorical_nll_rows(out_0, d.classes, cfg.classes));
  }

  Var rate = nn::scale(nn::mean(nn::kl_std_normal_rows(lat_t.mean, lat_t.logvar)), T);
  Var prior = g.constant(d.prior_z);
  const double bw = obj.resolve_bandwidth(cfg.latent_dim, z_t.value(), d.prior_z);
  Var mmd_v = nn::scale(mmd_rbf(z_t, prior, bw), T);

  const LossWeights& w = obj.weights;
  Var total = nn::add(nn::add(nn::add(flow, nn::scale(rate, w.rate_coefficient())), nn::scale(mmd_v, w.mmd_coefficient())), dist);

  BatchLoss out{total, {}, z_t.value()};
  out.parts.flow_kl = flow.value()[0];
  out.parts.latent_rate = rate.value()[0];
  out.parts.mmd = mmd_v.value()[0];
  out.parts.distortion_nll = dist.value()[0];
  out.parts.total = total.value()[0];
  return out;
}

}  // namespace paramrel
