#pragma once

#include <cmath>
#include <string>

#include "paramrel/error.hpp"

namespace paramrel {

enum class DataKind { continuous, discrete };

inline const char* to_string(DataKind k) { return k == DataKind::continuous ? "continuous" : "discrete"; }

// Accuracy bookkeeping over T steps. Step indices run in the reversed
// convention: t = T carries no information, t = 0 carries all of it.
//
//   continuous: beta(u) = sigma1^(-2u) - 1
//   discrete:   beta(u) = beta1 * u^2
//
// with information-time u = 1 - t/T, and alpha_t = beta(u(t-1)) - beta(u(t)),
// the accuracy added by the sender at step t.
class AccuracySchedule {
 public:
  static AccuracySchedule continuous(int T, double sigma1) {
    if (!(sigma1 > 0.0 && sigma1 < 1.0)) {
      throw ConfigError("schedule.sigma1 must lie in (0,1), got " + std::to_string(sigma1));
    }
    return AccuracySchedule(DataKind::continuous, T, sigma1, 0.0);
  }

  static AccuracySchedule discrete(int T, double beta1) {
    if (!(beta1 > 0.0)) throw ConfigError("schedule.beta1 must be positive, got " + std::to_string(beta1));
    return AccuracySchedule(DataKind::discrete, T, 0.0, beta1);
  }

  DataKind kind() const noexcept { return kind_; }
  int T() const noexcept { return T_; }
  double sigma1() const noexcept { return sigma1_; }
  double beta1() const noexcept { return beta1_; }

  double info_time(int t) const {
    if (t < 0 || t > T_) {
      throw UsageError("step index " + std::to_string(t) + " outside [0, " + std::to_string(T_) + "]");
    }
    return 1.0 - static_cast<double>(t) / static_cast<double>(T_);
  }

  double beta_at_info(double u) const {
    if (kind_ == DataKind::continuous) return std::pow(sigma1_, -2.0 * u) - 1.0;
    return beta1_ * u * u;
  }

  double beta_at(int t) const { return beta_at_info(info_time(t)); }

  double alpha_at(int t) const {
    if (t < 1 || t > T_) {
      throw UsageError("alpha_t defined for t in [1, " + std::to_string(T_) + "], got " + std::to_string(t));
    }
    return beta_at(t - 1) - beta_at(t);
  }

  // Flow mean coefficient beta/(1+beta); continuous schedules only.
  double gamma_at(int t) const {
    if (kind_ != DataKind::continuous) throw UsageError("gamma(t) is defined only for continuous schedules");
    const double b = beta_at(t);
    return b / (1.0 + b);
  }

  // Step fraction t/T fed to the time embeddings.
  double step_fraction(int t) const { return static_cast<double>(t) / static_cast<double>(T_); }

 private:
  AccuracySchedule(DataKind kind, int T, double sigma1, double beta1)
      : kind_(kind), T_(T), sigma1_(sigma1), beta1_(beta1) {
    if (T < 1) throw ConfigError("schedule.T must be >= 1, got " + std::to_string(T));
  }

  DataKind kind_;
  int T_;
  double sigma1_;
  double beta1_;
};

}  // namespace paramrel
