#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "paramrel/bfn.hpp"
#include "paramrel/error.hpp"
#include "paramrel/model.hpp"
#include "paramrel/nn/adam.hpp"
#include "paramrel/objective.hpp"
#include "paramrel/random.hpp"
#include "paramrel/schedule.hpp"

namespace paramrel {

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  std::size_t max_steps = 0;  // 0: no cap beyond the epoch count
  std::uint64_t seed = 0;
  nn::AdamConfig adam;
  ObjectiveConfig objective;

  void validate() const {
    if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2 (the MMD term needs two samples)");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (!(adam.lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
    objective.weights.validate();
  }
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossBreakdown loss;
};

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double mean_total = 0.0;
};

class Trainer {
 public:
  // Independent streams for batch order and per-step draws.
  enum Stream : std::uint64_t { kShuffle = 1, kDraws = 2 };

  Trainer(ParamRelModel& model, AccuracySchedule sched, TrainConfig cfg)
      : model_(model), sched_(sched), cfg_(cfg), adam_(cfg.adam), shuffle_rng_(Rng(cfg.seed).split(kShuffle)),
        draw_rng_(Rng(cfg.seed).split(kDraws)) {
    cfg_.validate();
    if (sched_.kind() != model_.config().kind) {
      throw ConfigError(std::string("schedule is ") + to_string(sched_.kind()) + " but model is " +
                        to_string(model_.config().kind));
    }
    if (sched_.T() != model_.config().T) throw ConfigError("schedule.T disagrees with the model's T");
  }

  const nn::AdamState& optimizer() const noexcept { return adam_; }
  std::size_t steps_taken() const noexcept { return steps_; }

  // One optimizer update on a batch of rows; returns the batch-mean terms.
  LossBreakdown train_step(const Tensor& batch) {
    BatchDraws draws = draw_batch(model_.config(), sched_, batch, cfg_.objective.n_mc, draw_rng_);
    Graph g;
    BatchLoss loss = batch_loss(g, model_, model_.params(), draws, cfg_.objective, sched_);
    check_finite(loss.parts);
    g.backward(loss.total);
    nn::ParamGrads grads = g.param_grads(model_.params());
    for (const auto& [name, grad] : grads) {
      if (!grad.all_finite()) throw NumericError("nonfinite gradient for parameter '" + name + "' at step " + std::to_string(steps_));
    }
    nn::adam_step(model_.params(), grads, adam_);
    ++steps_;
    return loss.parts;
  }

  // Shuffled minibatch epochs over data rows; the trailing partial batch is
  // dropped when it has fewer than two rows.
  std::vector<EpochSummary> fit(const Tensor& data, const std::function<void(const StepRecord&)>& on_step = {}) {
    if (data.rank() != 2 || data.dim(0) < 2) throw DataError("training data must be [N x D] with N >= 2");
    const std::size_t N = data.dim(0), D = data.dim(1);
    std::vector<std::size_t> order(N);
    std::vector<EpochSummary> epochs;
    for (std::size_t e = 0; e < cfg_.epochs && !budget_spent(); ++e) {
      for (std::size_t i = 0; i < N; ++i) order[i] = i;
      shuffle_rng_.shuffle(order);
      EpochSummary summary{e, 0, 0.0};
      for (std::size_t start = 0; start + 1 < N && !budget_spent(); start += cfg_.batch_size) {
        const std::size_t B = std::min(cfg_.batch_size, N - start);
        Tensor batch({B, D});
        for (std::size_t b = 0; b < B; ++b) {
          auto src = data.row(order[start + b]);
          std::copy(src.begin(), src.end(), batch.row(b).begin());
        }
        StepRecord rec{steps_, e, train_step(batch)};
        summary.mean_total += rec.loss.total;
        ++summary.steps;
        if (on_step) on_step(rec);
      }
      if (summary.steps > 0) {
        summary.mean_total /= static_cast<double>(summary.steps);
        epochs.push_back(summary);
      }
    }
    return epochs;
  }

 private:
  bool budget_spent() const { return cfg_.max_steps > 0 && steps_ >= cfg_.max_steps; }

  void check_finite(const LossBreakdown& b) const {
    const std::pair<const char*, double> terms[] = {
        {"flow_kl", b.flow_kl}, {"latent_rate", b.latent_rate}, {"mmd", b.mmd}, {"distortion_nll", b.distortion_nll}};
    for (const auto& [name, v] : terms) {
      if (!std::isfinite(v)) {
        throw NumericError("nonfinite loss term " + std::string(name) + " at step " + std::to_string(steps_) +
                           " (flow_kl=" + std::to_string(b.flow_kl) + " latent_rate=" + std::to_string(b.latent_rate) +
                           " mmd=" + std::to_string(b.mmd) + " distortion_nll=" + std::to_string(b.distortion_nll) + ")");
      }
    }
  }

  ParamRelModel& model_;
  AccuracySchedule sched_;
  TrainConfig cfg_;
  nn::AdamState adam_;
  Rng shuffle_rng_;
  Rng draw_rng_;
  std::size_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// Sampling and reverse-sampling. These are templates over the model so that
// hand-written stub models can stand in for the network. A model provides
//   config(), encode(params, t) -> LatentGaussian,
//   estimate_x(ContinuousParams, z, t, sched) for continuous data,
//   output_probs(DiscreteParams, z, t) for discrete data.

enum class ZMode { prior, encoder };

struct TrajectoryRecord {
  int t = 0;         // flow step the network was conditioned on
  Tensor theta;      // mu [n x D] or simplex [n*D x K] at step t
  double rho = 1.0;  // continuous only
  Tensor z{};        // latent used at step t
  Tensor x_hat{};    // output estimate (continuous) or emitted classes (discrete)
  Tensor y{};        // observation applied when leaving this record; empty on the last one
  double alpha = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;
  bool truncated = false;
  std::string truncation_reason;
};

struct SampleResult {
  Tensor samples;  // [n x D]; discrete values are class indices
  Trajectory trajectory;
};

namespace detail {

inline Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor z({rows, cols});
  for (double& v : z.data()) v = rng.normal();
  return z;
}

inline std::vector<int> to_classes(const Tensor& x, std::size_t K) {
  std::vector<int> c(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) c[i] = static_cast<int>(std::lround(x[i]));
  bfn::require_classes(c, K);
  return c;
}

inline Tensor from_classes(const std::vector<int>& c, std::size_t rows) {
  Tensor x({rows, c.size() / rows});
  for (std::size_t i = 0; i < c.size(); ++i) x[i] = static_cast<double>(c[i]);
  return x;
}

inline std::vector<int> sample_classes(const Tensor& probs, std::size_t K, Rng& rng) {
  std::vector<int> c(probs.size() / K);
  for (std::size_t s = 0; s < c.size(); ++s) {
    const double u = rng.uniform();
    double acc = 0.0;
    int k = static_cast<int>(K) - 1;
    for (std::size_t j = 0; j < K; ++j) {
      acc += probs[s * K + j];
      if (u < acc) {
        k = static_cast<int>(j);
        break;
      }
    }
    c[s] = k;
  }
  return c;
}

inline std::vector<int> argmax_classes(const Tensor& probs, std::size_t K) {
  std::vector<int> c(probs.size() / K);
  for (std::size_t s = 0; s < c.size(); ++s) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < K; ++j)
      if (probs[s * K + j] > probs[s * K + best]) best = j;
    c[s] = static_cast<int>(best);
  }
  return c;
}

template <typename Model>
std::size_t check_rows(const Model& model, const Tensor& x, const char* what) {
  const std::size_t D = model.config().data_dim;
  if (x.size() == 0 || x.size() % D != 0) {
    throw DimensionError(std::string(what) + ": input " + nn::shape_str(x.shape()) + " is not a batch of D=" + std::to_string(D));
  }
  return x.size() / D;
}

template <typename Model, typename Params>
Tensor choose_z(const Model& model, const Params& theta, int t, std::size_t n, ZMode mode, Rng& rng) {
  if (mode == ZMode::prior) return standard_normal(n, model.config().latent_dim, rng);
  return reparam_sample(model.encode(theta, t), rng);
}

}  // namespace detail

// Ancestral sampling from the prior state: at each step t = T..1 the model
// proposes x_hat given theta_t and z_t, a sender sample of x_hat at accuracy
// alpha_t updates theta, and the final output is read at t = 0.
template <typename Model>
SampleResult generate(const Model& model, const AccuracySchedule& sched, std::size_t n, Rng& rng, ZMode z_mode = ZMode::prior) {
  const ModelConfig& cfg = model.config();
  if (n < 1) throw UsageError("generate: n must be >= 1");
  const std::size_t D = cfg.data_dim;
  SampleResult out;
  auto& recs = out.trajectory.records;
  if (cfg.kind == DataKind::continuous) {
    bfn::ContinuousParams theta = bfn::continuous_prior({n, D});
    for (int t = sched.T(); t >= 0; --t) {
      TrajectoryRecord r{t, theta.mu, theta.rho};
      r.z = detail::choose_z(model, theta, t, n, z_mode, rng);
      r.x_hat = model.estimate_x(theta, r.z, t, sched);
      if (t > 0) {
        auto y = bfn::sample_sender_continuous(r.x_hat, sched.alpha_at(t), rng);
        r.y = y.y;
        r.alpha = y.alpha;
        theta = bfn::bayes_update_continuous(theta, y.y, y.alpha);
      } else {
        out.samples = r.x_hat.reshaped({n, D});
      }
      recs.push_back(std::move(r));
    }
  } else {
    const std::size_t K = cfg.classes;
    bfn::DiscreteParams theta = bfn::discrete_prior(n * D, K);
    for (int t = sched.T(); t >= 0; --t) {
      TrajectoryRecord r{t, theta.theta};
      r.z = detail::choose_z(model, theta, t, n, z_mode, rng);
      const std::vector<int> classes = detail::sample_classes(model.output_probs(theta, r.z, t), K, rng);
      r.x_hat = detail::from_classes(classes, n);
      if (t > 0) {
        auto y = bfn::sample_sender_discrete(classes, sched.alpha_at(t), K, rng);
        r.y = y.y;
        r.alpha = y.alpha;
        theta = bfn::bayes_update_discrete(theta, y.y, y.alpha);
      } else {
        out.samples = r.x_hat;
      }
      recs.push_back(std::move(r));
    }
  }
  return out;
}

// Walks the chain backwards from a full-information state theta_0 ~ p_F(x0; 0)
// to t = T. Step t removes accuracy alpha_t. The first removal uses x0 itself
// as the observation; later removals use the model's decoded estimate at the
// current state, with z set to the encoder mean. The last record holds theta_T.
// Each record's (y, alpha) is the observation that was removed to reach the
// next record, so applying h with them walks back down the chain.
template <typename Model>
Trajectory reverse_sample(const Model& model, const AccuracySchedule& sched, const Tensor& x0, Rng& rng) {
  const ModelConfig& cfg = model.config();
  const std::size_t n = detail::check_rows(model, x0, "reverse_sample");
  const std::size_t D = cfg.data_dim;
  Trajectory traj;
  auto& recs = traj.records;
  if (cfg.kind == DataKind::continuous) {
    bfn::ContinuousParams theta = bfn::sample_flow_continuous(x0.reshaped({n, D}), 0, sched, rng);
    for (int t = 0; t <= sched.T(); ++t) {
      TrajectoryRecord r{t, theta.mu, theta.rho};
      r.z = model.encode(theta, t).mean;
      r.x_hat = model.estimate_x(theta, r.z, t, sched);
      if (t < sched.T()) {
        const int step = t + 1;
        r.y = t == 0 ? x0.reshaped({n, D}) : r.x_hat;
        r.alpha = sched.alpha_at(step);
        try {
          theta = bfn::inverse_update_continuous(theta, r.y, r.alpha);
        } catch (const SingularInverseError& e) {
          traj.truncated = true;
          traj.truncation_reason = e.what();
          recs.push_back(std::move(r));
          return traj;
        }
      }
      recs.push_back(std::move(r));
    }
  } else {
    const std::size_t K = cfg.classes;
    const std::vector<int> c0 = detail::to_classes(x0, K);
    bfn::DiscreteParams theta = bfn::sample_flow_discrete(c0, 0, sched, K, rng);
    for (int t = 0; t <= sched.T(); ++t) {
      TrajectoryRecord r{t, theta.theta};
      r.z = model.encode(theta, t).mean;
      const std::vector<int> classes = t == 0 ? c0 : detail::sample_classes(model.output_probs(theta, r.z, t), K, rng);
      r.x_hat = detail::from_classes(classes, n);
      if (t < sched.T()) {
        r.alpha = sched.alpha_at(t + 1);
        r.y = bfn::sender_mean_discrete(classes, r.alpha, K);
        theta = bfn::inverse_update_discrete(theta, r.y, r.alpha);
      }
      recs.push_back(std::move(r));
    }
  }
  return traj;
}

// Reverse-samples x0, replays the recorded updates from theta_T back down to
// t = 0, and decodes there with the encoder-mean latent. Continuous outputs
// are the x_hat estimate; discrete outputs are the most probable classes.
template <typename Model>
Tensor reconstruct(const Model& model, const AccuracySchedule& sched, const Tensor& x0, Rng& rng) {
  const ModelConfig& cfg = model.config();
  const std::size_t n = detail::check_rows(model, x0, "reconstruct");
  const Trajectory traj = reverse_sample(model, sched, x0, rng);
  if (traj.truncated) throw SingularInverseError("reconstruct: " + traj.truncation_reason);
  const auto& recs = traj.records;
  if (cfg.kind == DataKind::continuous) {
    bfn::ContinuousParams theta{recs.back().theta, recs.back().rho};
    for (std::size_t i = recs.size() - 1; i-- > 0;) theta = bfn::bayes_update_continuous(theta, recs[i].y, recs[i].alpha);
    const Tensor z = model.encode(theta, 0).mean;
    return model.estimate_x(theta, z, 0, sched).reshaped(x0.shape());
  }
  const std::size_t K = cfg.classes;
  bfn::DiscreteParams theta{recs.back().theta, K};
  for (std::size_t i = recs.size() - 1; i-- > 0;) theta = bfn::bayes_update_discrete(theta, recs[i].y, recs[i].alpha);
  const Tensor z = model.encode(theta, 0).mean;
  return detail::from_classes(detail::argmax_classes(model.output_probs(theta, z, 0), K), n).reshaped(x0.shape());
}

// ---------------------------------------------------------------------------
// Interpolation

inline Tensor lerp(const Tensor& a, const Tensor& b, double lambda) {
  nn::require_same_shape(a, b, "lerp");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - lambda) * a[i] + lambda * b[i];
  // Exact endpoints regardless of rounding in the blend.
  if (lambda == 0.0) return a;
  if (lambda == 1.0) return b;
  return out;
}

struct SlerpResult {
  Tensor value;
  bool fell_back_to_linear = false;
};

// sin((1-l) w)/sin w * a + sin(l w)/sin w * b with w the angle between a and b.
inline SlerpResult slerp(const Tensor& a, const Tensor& b, double lambda) {
  nn::require_same_shape(a, b, "slerp");
  const double na = std::sqrt(nn::squared_norm(a.data())), nb = std::sqrt(nn::squared_norm(b.data()));
  double cosw = 0.0;
  if (na > 0.0 && nb > 0.0) {
    for (std::size_t i = 0; i < a.size(); ++i) cosw += a[i] * b[i];
    cosw = std::clamp(cosw / (na * nb), -1.0, 1.0);
  }
  const double w = std::acos(cosw);
  const double s = std::sin(w);
  // acos loses about half the digits near cos w = +-1, so parallel inputs can
  // come out with w ~ 1e-8 instead of 0. Below this the arcs are linear anyway.
  if (na == 0.0 || nb == 0.0 || s < 1e-6) return {lerp(a, b, lambda), true};
  if (lambda == 0.0) return {a, false};
  if (lambda == 1.0) return {b, false};
  const double ca = std::sin((1.0 - lambda) * w) / s, cb = std::sin(lambda * w) / s;
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = ca * a[i] + cb * b[i];
  return {out, false};
}

enum class InterpMode { linear, slerp };

struct Interpolation {
  std::vector<double> lambdas;
  std::vector<Tensor> codes;    // interpolated reverse-endpoint representations
  std::vector<Tensor> outputs;  // decoded samples [1 x D]
  bool fell_back_to_linear = false;
};

// Deterministic decode from a theta_T state: z is the encoder mean at each
// step and the observation is the model's own estimate (continuous) or the
// expected sender mean alpha (K p - 1) (discrete).
template <typename Model>
Tensor decode_from_endpoint(const Model& model, const AccuracySchedule& sched, const Tensor& code) {
  const ModelConfig& cfg = model.config();
  const std::size_t D = cfg.data_dim;
  const std::size_t n = code.size() / cfg.feature_dim();
  if (cfg.kind == DataKind::continuous) {
    bfn::ContinuousParams theta{code.reshaped({n, D}), 1.0};
    for (int t = sched.T(); t >= 1; --t) {
      const Tensor x = model.estimate_x(theta, model.encode(theta, t).mean, t, sched);
      theta = bfn::bayes_update_continuous(theta, x, sched.alpha_at(t));
    }
    return model.estimate_x(theta, model.encode(theta, 0).mean, 0, sched);
  }
  const std::size_t K = cfg.classes;
  bfn::DiscreteParams theta{nn::softmax_groups(code.reshaped({n * D, K}), K), K};
  for (int t = sched.T(); t >= 1; --t) {
    const Tensor p = model.output_probs(theta, model.encode(theta, t).mean, t);
    const double alpha = sched.alpha_at(t);
    Tensor y(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) y[i] = alpha * (static_cast<double>(K) * p[i] - 1.0);
    theta = bfn::bayes_update_discrete(theta, y, alpha);
  }
  return detail::from_classes(detail::argmax_classes(model.output_probs(theta, model.encode(theta, 0).mean, 0), K), n);
}

// Reverse endpoint of one example: mu at rho = 1 (continuous) or log theta_T (discrete).
template <typename Model>
Tensor reverse_endpoint(const Model& model, const AccuracySchedule& sched, const Tensor& x0, Rng& rng) {
  const Trajectory traj = reverse_sample(model, sched, x0, rng);
  if (traj.truncated) throw SingularInverseError("interpolate: " + traj.truncation_reason);
  Tensor code = traj.records.back().theta;
  if (model.config().kind == DataKind::discrete) {
    for (double& v : code.data()) v = std::log(std::max(v, 1e-300));
  }
  return code;
}

template <typename Model>
Interpolation interpolate(const Model& model, const AccuracySchedule& sched, const Tensor& xA, const Tensor& xB, InterpMode mode,
                          std::size_t M, Rng& rng) {
  if (M < 2) throw UsageError("interpolate: need at least 2 steps");
  const Tensor a = reverse_endpoint(model, sched, xA, rng);
  const Tensor b = reverse_endpoint(model, sched, xB, rng);
  Interpolation out;
  for (std::size_t i = 0; i < M; ++i) {
    const double lambda = static_cast<double>(i) / static_cast<double>(M - 1);
    Tensor code;
    if (mode == InterpMode::slerp) {
      SlerpResult s = slerp(a, b, lambda);
      out.fell_back_to_linear = out.fell_back_to_linear || s.fell_back_to_linear;
      code = std::move(s.value);
    } else {
      code = lerp(a, b, lambda);
    }
    out.outputs.push_back(decode_from_endpoint(model, sched, code));
    out.lambdas.push_back(lambda);
    out.codes.push_back(std::move(code));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Latent traversal

struct Traversal {
  std::vector<double> values;
  std::vector<Tensor> latents;  // [1 x L] each
  std::vector<Tensor> outputs;  // [1 x D] each; discrete outputs are expected class indices
};

// Encodes one example at t_probe from a theta ~ p_F draw, then sweeps latent
// coordinate d over M equispaced values in [lo, hi] and decodes each at t_probe.
template <typename Model>
Traversal traverse(const Model& model, const AccuracySchedule& sched, const Tensor& x0, std::size_t d, double lo, double hi,
                   std::size_t M, int t_probe, Rng& rng) {
  const ModelConfig& cfg = model.config();
  if (d >= cfg.latent_dim) {
    throw UsageError("traverse: dim " + std::to_string(d) + " outside [0, " + std::to_string(cfg.latent_dim) + ")");
  }
  if (M < 2) throw UsageError("traverse: M must be >= 2");
  if (detail::check_rows(model, x0, "traverse") != 1) throw UsageError("traverse takes a single example");
  const std::size_t D = cfg.data_dim;
  Traversal out;
  auto sweep = [&](const auto& theta, auto&& decode) {
    const Tensor base = model.encode(theta, t_probe).mean;
    for (std::size_t i = 0; i < M; ++i) {
      const double v = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(M - 1);
      Tensor z = base;
      z[d] = v;
      out.values.push_back(v);
      out.outputs.push_back(decode(theta, z));
      out.latents.push_back(std::move(z));
    }
  };
  if (cfg.kind == DataKind::continuous) {
    const auto theta = bfn::sample_flow_continuous(x0.reshaped({1, D}), t_probe, sched, rng);
    sweep(theta, [&](const bfn::ContinuousParams& th, const Tensor& z) { return model.estimate_x(th, z, t_probe, sched); });
  } else {
    const std::size_t K = cfg.classes;
    const auto theta = bfn::sample_flow_discrete(detail::to_classes(x0, K), t_probe, sched, K, rng);
    sweep(theta, [&](const bfn::DiscreteParams& th, const Tensor& z) {
      const Tensor p = model.output_probs(th, z, t_probe);
      Tensor e({1, D});
      for (std::size_t s = 0; s < D; ++s)
        for (std::size_t k = 0; k < K; ++k) e[s] += static_cast<double>(k) * p[s * K + k];
      return e;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flow heatmap for a scalar continuous datum

struct FlowHeatmap {
  std::vector<int> steps;                 // columns, t = T..0
  std::vector<double> bin_edges;          // bins + 1 edges
  std::vector<std::vector<double>> log_density;  // [column][bin]
  std::vector<std::vector<double>> trajectories;  // [trajectory][column] of mu
  double x0 = 0.0;

  std::size_t bins() const { return bin_edges.size() - 1; }
  double bin_center(std::size_t i) const { return 0.5 * (bin_edges[i] + bin_edges[i + 1]); }
};

namespace detail {
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
}  // namespace detail

// Log of the bin-averaged density of p_F(mu | x0; t), one column per step,
// plus sequentially simulated Bayesian-update trajectories of mu. Columns run
// from the prior (t = T) to full information (t = 0).
inline FlowHeatmap export_flow_heatmap(double x0, const AccuracySchedule& sched, std::size_t bins, std::size_t n_trajectories,
                                       Rng& rng) {
  if (sched.kind() != DataKind::continuous) throw UsageError("flow heatmap needs a continuous schedule");
  if (bins < 2) throw UsageError("flow heatmap needs at least 2 bins");
  constexpr double kLogFloor = -690.7755278982137;  // log(1e-300)
  FlowHeatmap h;
  h.x0 = x0;
  const double half = 1.5 * std::abs(x0) + 1.0;
  for (std::size_t i = 0; i <= bins; ++i) h.bin_edges.push_back(-half + 2.0 * half * static_cast<double>(i) / static_cast<double>(bins));
  for (int t = sched.T(); t >= 0; --t) {
    h.steps.push_back(t);
    const double gamma = sched.gamma_at(t);
    const double mean = gamma * x0;
    const double sd = std::sqrt(gamma * (1.0 - gamma));
    std::vector<double> col(bins);
    for (std::size_t i = 0; i < bins; ++i) {
      const double a = h.bin_edges[i], b = h.bin_edges[i + 1];
      double mass;
      if (sd <= 0.0) {
        // Point mass: all of it lies in the bin [a, b) holding the mean.
        mass = (mean >= a && (mean < b || (i + 1 == bins && mean <= b))) ? 1.0 : 0.0;
      } else {
        mass = detail::normal_cdf((b - mean) / sd) - detail::normal_cdf((a - mean) / sd);
      }
      col[i] = mass > 0.0 ? std::max(kLogFloor, std::log(mass / (b - a))) : kLogFloor;
    }
    h.log_density.push_back(std::move(col));
  }
  const Tensor x = Tensor::vector({x0});
  for (std::size_t k = 0; k < n_trajectories; ++k) {
    bfn::ContinuousParams theta = bfn::continuous_prior({1});
    std::vector<double> path{theta.mu[0]};
    for (int t = sched.T(); t >= 1; --t) {
      const auto y = bfn::sample_sender_continuous(x, sched.alpha_at(t), rng);
      theta = bfn::bayes_update_continuous(theta, y.y, y.alpha);
      path.push_back(theta.mu[0]);
    }
    h.trajectories.push_back(std::move(path));
  }
  return h;
}

}  // namespace paramrel
