#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "paramrel/error.hpp"
#include "paramrel/nn/tensor.hpp"
#include "paramrel/random.hpp"
#include "paramrel/schedule.hpp"

namespace paramrel::bfn {

using nn::Tensor;

// Gaussian input distribution. One precision is shared by every dimension
// because every update in the chain applies the same accuracy to all of them.
struct ContinuousParams {
  Tensor mu;
  double rho = 1.0;
};

// Categorical input distribution, theta:[slots x K]. A batch of n examples
// with D dimensions each is stored as n*D slots, example-major.
struct DiscreteParams {
  Tensor theta;
  std::size_t K = 2;

  std::size_t slots() const { return theta.size() / K; }
};

struct SenderSample {
  Tensor y;
  double alpha = 0.0;
};

inline ContinuousParams continuous_prior(nn::Shape shape) { return {Tensor(std::move(shape), 0.0), 1.0}; }

inline DiscreteParams discrete_prior(std::size_t slots, std::size_t K) {
  if (K < 2) throw ConfigError("discrete data needs K >= 2 classes");
  return {Tensor({slots, K}, 1.0 / static_cast<double>(K)), K};
}

namespace detail {

inline void require_finite(const Tensor& y, const char* what) {
  if (!y.all_finite()) throw DataError(std::string(what) + ": nonfinite sender sample");
}

// theta_k <- theta_k * exp(sign * y_k), renormalized per slot in log space.
inline Tensor tilt_simplex(const DiscreteParams& p, const Tensor& y, double sign) {
  nn::require_same_shape(p.theta, y, "discrete update");
  const std::size_t K = p.K;
  Tensor out(p.theta.shape());
  std::vector<double> logw(K);
  for (std::size_t off = 0; off < p.theta.size(); off += K) {
    double mx = -INFINITY;
    for (std::size_t k = 0; k < K; ++k) {
      const double th = p.theta[off + k];
      logw[k] = th > 0.0 ? std::log(th) + sign * y[off + k] : -INFINITY;
      mx = std::max(mx, logw[k]);
    }
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double w = std::isfinite(logw[k]) ? std::exp(logw[k] - mx) : 0.0;
      out[off + k] = w;
      z += w;
    }
    for (std::size_t k = 0; k < K; ++k) out[off + k] /= z;
  }
  return out;
}

inline double log_sum_exp(std::span<const double> v) {
  double mx = -INFINITY;
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace detail

// mu' = (alpha y + rho mu) / (alpha + rho), rho' = rho + alpha
inline ContinuousParams bayes_update_continuous(const ContinuousParams& p, const Tensor& y, double alpha) {
  nn::require_same_shape(p.mu, y, "bayes_update_continuous");
  detail::require_finite(y, "bayes_update_continuous");
  if (alpha < 0.0) throw UsageError("bayes_update_continuous: alpha must be >= 0");
  ContinuousParams out{Tensor(p.mu.shape()), p.rho + alpha};
  for (std::size_t i = 0; i < y.size(); ++i) out.mu[i] = (alpha * y[i] + p.rho * p.mu[i]) / out.rho;
  return out;
}

inline ContinuousParams inverse_update_continuous(const ContinuousParams& next, const Tensor& y, double alpha) {
  nn::require_same_shape(next.mu, y, "inverse_update_continuous");
  detail::require_finite(y, "inverse_update_continuous");
  const double rho_prev = next.rho - alpha;
  if (!(rho_prev > 0.0)) {
    throw SingularInverseError("inverse update needs rho > alpha (rho=" + std::to_string(next.rho) +
                               ", alpha=" + std::to_string(alpha) + ")");
  }
  ContinuousParams out{Tensor(next.mu.shape()), rho_prev};
  for (std::size_t i = 0; i < y.size(); ++i) out.mu[i] = (next.rho * next.mu[i] - alpha * y[i]) / rho_prev;
  return out;
}

// theta' = e^y * theta / sum_k e^{y_k} theta_k. The accuracy is already folded into y.
inline DiscreteParams bayes_update_discrete(const DiscreteParams& p, const Tensor& y, double /*alpha*/) {
  detail::require_finite(y, "bayes_update_discrete");
  return {detail::tilt_simplex(p, y, +1.0), p.K};
}

inline DiscreteParams inverse_update_discrete(const DiscreteParams& next, const Tensor& y, double /*alpha*/) {
  detail::require_finite(y, "inverse_update_discrete");
  return {detail::tilt_simplex(next, y, -1.0), next.K};
}

inline SenderSample sample_sender_continuous(const Tensor& x0, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw UsageError("sample_sender_continuous: alpha must be positive");
  SenderSample s{Tensor(x0.shape()), alpha};
  const double sd = 1.0 / std::sqrt(alpha);
  for (std::size_t i = 0; i < x0.size(); ++i) s.y[i] = x0[i] + sd * rng.normal();
  return s;
}

inline void require_classes(const std::vector<int>& classes, std::size_t K) {
  for (int c : classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= K) {
      throw DataError("class index " + std::to_string(c) + " outside [0, " + std::to_string(K) + ")");
    }
  }
}

// Sender mean alpha (K e_x - 1), one row of K per class entry.
inline Tensor sender_mean_discrete(const std::vector<int>& classes, double alpha, std::size_t K) {
  Tensor m({classes.size(), K});
  const double kd = static_cast<double>(K);
  for (std::size_t s = 0; s < classes.size(); ++s)
    for (std::size_t k = 0; k < K; ++k)
      m[s * K + k] = alpha * ((static_cast<int>(k) == classes[s] ? kd : 0.0) - 1.0);
  return m;
}

// y = alpha (K e_x - 1) + sqrt(alpha K) eps
inline SenderSample sample_sender_discrete(const std::vector<int>& classes, double alpha, std::size_t K, Rng& rng) {
  require_classes(classes, K);
  if (alpha < 0.0) throw UsageError("sample_sender_discrete: alpha must be >= 0");
  SenderSample s{sender_mean_discrete(classes, alpha, K), alpha};
  const double sd = std::sqrt(alpha * static_cast<double>(K));
  if (sd > 0.0)
    for (double& v : s.y.data()) v += sd * rng.normal();
  return s;
}

// One-shot draw from the flow p_F(theta | x0; t): mu ~ N(gamma x0, gamma(1-gamma)), rho = 1 + beta.
inline ContinuousParams sample_flow_continuous(const Tensor& x0, int t, const AccuracySchedule& sched, Rng& rng) {
  const double gamma = sched.gamma_at(t);
  const double sd = std::sqrt(gamma * (1.0 - gamma));
  ContinuousParams p{Tensor(x0.shape()), 1.0 + sched.beta_at(t)};
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double eps = rng.normal();
    p.mu[i] = gamma * x0[i] + sd * eps;
  }
  return p;
}

// theta = softmax(y), y ~ N(beta (K e_x - 1), beta K I)
inline DiscreteParams sample_flow_discrete(const std::vector<int>& classes, int t, const AccuracySchedule& sched,
                                           std::size_t K, Rng& rng) {
  if (sched.kind() != DataKind::discrete) throw UsageError("sample_flow_discrete needs a discrete schedule");
  const double beta = sched.beta_at(t);
  SenderSample s = sample_sender_discrete(classes, beta, K, rng);
  return {nn::softmax_groups(s.y, K), K};
}

// KL(N(x0, 1/alpha) || N(xhat, 1/alpha)) = alpha/2 ||x0 - xhat||^2
inline double kl_sender_receiver_continuous(const Tensor& x0, const Tensor& xhat, double alpha) {
  nn::require_same_shape(x0, xhat, "kl_sender_receiver_continuous");
  double s = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) s += (x0[i] - xhat[i]) * (x0[i] - xhat[i]);
  return 0.5 * alpha * s;
}

// log N(y; mean, var I) in K dimensions.
inline double gaussian_log_density(std::span<const double> y, std::span<const double> mean, double var) {
  double sq = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) sq += (y[k] - mean[k]) * (y[k] - mean[k]);
  const auto K = static_cast<double>(y.size());
  return -0.5 * K * std::log(2.0 * std::numbers::pi * var) - 0.5 * sq / var;
}

inline double sender_log_density_discrete(const Tensor& y, const std::vector<int>& classes, double alpha, std::size_t K) {
  const Tensor m = sender_mean_discrete(classes, alpha, K);
  nn::require_same_shape(y, m, "sender_log_density_discrete");
  const double var = alpha * static_cast<double>(K);
  double s = 0.0;
  for (std::size_t off = 0; off < y.size(); off += K)
    s += gaussian_log_density(y.data().subspan(off, K), m.data().subspan(off, K), var);
  return s;
}

// log sum_k p_k N(y; alpha (K e_k - 1), alpha K I), summed over slots.
inline double receiver_log_density_discrete(const Tensor& y, const Tensor& probs, double alpha, std::size_t K) {
  nn::require_same_shape(y, probs, "receiver_log_density_discrete");
  const double var = alpha * static_cast<double>(K);
  const double kd = static_cast<double>(K);
  std::vector<double> terms(K), mean(K);
  double total = 0.0;
  for (std::size_t off = 0; off < y.size(); off += K) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0; j < K; ++j) mean[j] = alpha * ((j == k ? kd : 0.0) - 1.0);
      const double pk = probs[off + k];
      terms[k] = (pk > 0.0 ? std::log(pk) : -INFINITY) + gaussian_log_density(y.data().subspan(off, K), mean, var);
    }
    total += detail::log_sum_exp(terms);
  }
  return total;
}

struct McEstimate {
  double raw = 0.0;        // signed sample mean
  double std_error = 0.0;  // standard error of the mean

  double reported() const { return std::max(0.0, raw); }
};

// KL(sender || mixture receiver) with the sender itself as proposal.
inline McEstimate kl_sender_receiver_discrete_mc(const std::vector<int>& classes, const Tensor& probs, double alpha,
                                                 std::size_t K, std::size_t n_mc, Rng& rng) {
  if (n_mc < 1) throw UsageError("kl_sender_receiver_discrete_mc: n_mc must be >= 1");
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n_mc; ++i) {
    const SenderSample y = sample_sender_discrete(classes, alpha, K, rng);
    const double v = sender_log_density_discrete(y.y, classes, alpha, K) -
                     receiver_log_density_discrete(y.y, probs, alpha, K);
    s += v;
    s2 += v * v;
  }
  const auto n = static_cast<double>(n_mc);
  McEstimate e;
  e.raw = s / n;
  e.std_error = n > 1 ? std::sqrt(std::max(0.0, (s2 / n - e.raw * e.raw) / (n - 1.0))) : 0.0;
  return e;
}

}  // namespace paramrel::bfn
