#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "paramrel/bfn.hpp"
#include "support.hpp"

using namespace paramrel;
using namespace paramrel::bfn;

namespace {

struct Moments {
  double mean = 0, var = 0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(v.size() - 1);
  return m;
}

DiscreteParams random_simplex(std::size_t slots, std::size_t K, Rng& rng) {
  DiscreteParams p{Tensor({slots, K}), K};
  for (std::size_t s = 0; s < slots; ++s) {
    double z = 0;
    for (std::size_t k = 0; k < K; ++k) z += (p.theta[s * K + k] = 0.05 + rng.uniform());
    for (std::size_t k = 0; k < K; ++k) p.theta[s * K + k] /= z;
  }
  return p;
}

void expect_simplex(const DiscreteParams& p) {
  for (std::size_t s = 0; s < p.slots(); ++s) {
    double z = 0;
    for (std::size_t k = 0; k < p.K; ++k) {
      const double v = p.theta[s * p.K + k];
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      z += v;
    }
    EXPECT_NEAR(z, 1.0, 1e-9);
  }
}

// Two-sample agreement of mean and variance at 4 standard errors.
void expect_same_moments(const std::vector<double>& a, const std::vector<double>& b) {
  const Moments ma = moments(a), mb = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double se_mean = std::sqrt(ma.var / na + mb.var / nb);
  EXPECT_LT(std::abs(ma.mean - mb.mean), 4.0 * se_mean + 1e-12);
  // Var of the sample variance is about 2 sigma^4/(n-1) for near-Gaussian data;
  // the fourth moment is estimated directly to cover skewed simplex entries.
  auto var_se = [](const std::vector<double>& v, const Moments& m) {
    double m4 = 0;
    for (double x : v) m4 += std::pow(x - m.mean, 4);
    m4 /= static_cast<double>(v.size());
    return (m4 - m.var * m.var) / static_cast<double>(v.size());
  };
  const double se_var = std::sqrt(var_se(a, ma) + var_se(b, mb));
  EXPECT_LT(std::abs(ma.var - mb.var), 4.0 * se_var + 1e-12);
}

}  // namespace

TEST(ContinuousUpdate, HandExample) {
  const ContinuousParams p = bayes_update_continuous(continuous_prior({1}), Tensor::vector({2.0}), 1.0);
  EXPECT_EQ(p.mu[0], 1.0);
  EXPECT_EQ(p.rho, 2.0);
  const ContinuousParams q = inverse_update_continuous(p, Tensor::vector({2.0}), 1.0);
  EXPECT_EQ(q.mu[0], 0.0);
  EXPECT_EQ(q.rho, 1.0);
}

TEST(ContinuousUpdate, ZeroAccuracyIsIdentity) {
  const ContinuousParams p{Tensor::vector({0.3, -1.2}), 2.5};
  const ContinuousParams q = bayes_update_continuous(p, Tensor::vector({9.0, 9.0}), 0.0);
  EXPECT_EQ(q.mu, p.mu);
  EXPECT_EQ(q.rho, p.rho);
  const ContinuousParams r = inverse_update_continuous(p, Tensor::vector({9.0, 9.0}), 0.0);
  EXPECT_EQ(r.mu, p.mu);
  EXPECT_EQ(r.rho, p.rho);
}

TEST(ContinuousUpdate, MatchesGridPosterior) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const double mu = rng.normal(), rho = 0.5 + 3 * rng.uniform(), y = 2 * rng.normal(), alpha = 0.2 + 4 * rng.uniform();
    // Unnormalized product of the two Gaussian densities on a fine grid.
    const double lo = -12, hi = 12, h = 1e-4;
    long double z = 0, m1 = 0, m2 = 0;
    for (double x = lo; x <= hi; x += h) {
      const long double w = std::exp(-0.5 * rho * (x - mu) * (x - mu) - 0.5 * alpha * (x - y) * (x - y));
      z += w;
      m1 += w * x;
      m2 += w * x * x;
    }
    const double mean = static_cast<double>(m1 / z), var = static_cast<double>(m2 / z) - mean * mean;
    const ContinuousParams p = bayes_update_continuous({Tensor::vector({mu}), rho}, Tensor::vector({y}), alpha);
    EXPECT_NEAR(p.mu[0], mean, 1e-6);
    EXPECT_NEAR(1.0 / p.rho, var, 1e-6);
  }
}

TEST(ContinuousUpdate, NonfiniteSampleIsDataError) {
  EXPECT_THROW(bayes_update_continuous(continuous_prior({1}), Tensor::vector({NAN}), 1.0), DataError);
}

TEST(ContinuousUpdate, AdditivityWithSharedSample) {
  Rng rng(4);
  const ContinuousParams p{test_support::random_tensor({5}, rng), 1.7};
  const Tensor y = test_support::random_tensor({5}, rng);
  const ContinuousParams two = bayes_update_continuous(bayes_update_continuous(p, y, 0.4), y, 1.3);
  const ContinuousParams one = bayes_update_continuous(p, y, 1.7);
  EXPECT_LT(nn::max_abs_diff(two.mu, one.mu), 1e-10);
  EXPECT_NEAR(two.rho, one.rho, 1e-10);
}

TEST(ContinuousInverse, RoundTripAndSingularity) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const ContinuousParams p{test_support::random_tensor({4}, rng, 2.0), 0.1 + 10 * rng.uniform()};
    const Tensor y = test_support::random_tensor({4}, rng, 3.0);
    const double a = 5 * rng.uniform();
    const ContinuousParams back = inverse_update_continuous(bayes_update_continuous(p, y, a), y, a);
    EXPECT_LT(nn::max_abs_diff(back.mu, p.mu), 1e-10);
    EXPECT_NEAR(back.rho, p.rho, 1e-10);
    const ContinuousParams fwd = bayes_update_continuous(inverse_update_continuous(p, y, 0.5 * p.rho), y, 0.5 * p.rho);
    EXPECT_LT(nn::max_abs_diff(fwd.mu, p.mu), 1e-10);
  }
  const ContinuousParams p{Tensor::vector({0.0}), 2.0};
  EXPECT_THROW(inverse_update_continuous(p, Tensor::vector({1.0}), 2.0), SingularInverseError);
  EXPECT_THROW(inverse_update_continuous(p, Tensor::vector({1.0}), 3.0), SingularInverseError);
}

TEST(DiscreteUpdate, HandExampleAndInverse) {
  const DiscreteParams p = discrete_prior(1, 2);
  const Tensor y = Tensor::matrix(1, 2, {std::log(2.0), 0.0});
  const DiscreteParams q = bayes_update_discrete(p, y, 1.0);
  EXPECT_NEAR(q.theta[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(q.theta[1], 1.0 / 3.0, 1e-15);
  const DiscreteParams r = inverse_update_discrete(q, y, 1.0);
  EXPECT_NEAR(r.theta[0], 0.5, 1e-15);
  EXPECT_NEAR(r.theta[1], 0.5, 1e-15);
}

TEST(DiscreteUpdate, ZeroSampleIsIdentity) {
  Rng rng(6);
  const DiscreteParams p = random_simplex(4, 3, rng);
  EXPECT_LT(nn::max_abs_diff(bayes_update_discrete(p, Tensor({4, 3}), 1.0).theta, p.theta), 1e-15);
  EXPECT_LT(nn::max_abs_diff(inverse_update_discrete(p, Tensor({4, 3}), 1.0).theta, p.theta), 1e-15);
}

TEST(DiscreteUpdate, MatchesNaiveProduct) {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t K = 2 + rng.index(5);
    const DiscreteParams p = random_simplex(6, K, rng);
    const Tensor y = test_support::random_tensor({6, K}, rng, 3.0);
    const DiscreteParams q = bayes_update_discrete(p, y, 1.0);
    for (std::size_t s = 0; s < 6; ++s) {
      double z = 0;
      for (std::size_t k = 0; k < K; ++k) z += std::exp(y[s * K + k]) * p.theta[s * K + k];
      for (std::size_t k = 0; k < K; ++k)
        EXPECT_NEAR(q.theta[s * K + k], std::exp(y[s * K + k]) * p.theta[s * K + k] / z, 1e-12);
    }
    expect_simplex(q);
  }
}

TEST(DiscreteUpdate, LargeSamplesStayFinite) {
  const DiscreteParams p = discrete_prior(2, 3);
  const Tensor y = Tensor::matrix(2, 3, {900, 0, -900, 1e4, 1e4, 0});
  const DiscreteParams q = bayes_update_discrete(p, y, 1.0);
  expect_simplex(q);
  EXPECT_NEAR(q.theta[0], 1.0, 1e-12);
  EXPECT_NEAR(q.theta[3], 0.5, 1e-12);
}

TEST(DiscreteUpdate, Commutes) {
  Rng rng(8);
  const DiscreteParams p = random_simplex(5, 4, rng);
  const Tensor y1 = test_support::random_tensor({5, 4}, rng, 2.0), y2 = test_support::random_tensor({5, 4}, rng, 2.0);
  const DiscreteParams a = bayes_update_discrete(bayes_update_discrete(p, y1, 1), y2, 1);
  const DiscreteParams b = bayes_update_discrete(bayes_update_discrete(p, y2, 1), y1, 1);
  EXPECT_LT(nn::max_abs_diff(a.theta, b.theta), 1e-12);
}

TEST(DiscreteInverse, RoundTrip) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const DiscreteParams p = random_simplex(3, 3, rng);
    const Tensor y = test_support::random_tensor({3, 3}, rng, 2.0);
    EXPECT_LT(nn::max_abs_diff(inverse_update_discrete(bayes_update_discrete(p, y, 1), y, 1).theta, p.theta), 1e-10);
    EXPECT_LT(nn::max_abs_diff(bayes_update_discrete(inverse_update_discrete(p, y, 1), y, 1).theta, p.theta), 1e-10);
  }
}

TEST(SenderContinuous, DegenerateAndMoments) {
  Rng rng(10);
  const Tensor x0 = Tensor::vector({0.3, -0.7});
  const SenderSample s = sample_sender_continuous(x0, 1e12, rng);
  EXPECT_LT(nn::max_abs_diff(s.y, x0), 1e-5);

  const int n = 100000;
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = sample_sender_continuous(Tensor::vector({0.3}), 4.0, rng).y[0];
  const Moments m = moments(v);
  EXPECT_LT(std::abs(m.mean - 0.3), 4.0 * std::sqrt(0.25 / n));
  EXPECT_NEAR(m.var, 0.25, 0.05 * 0.25);
  EXPECT_THROW(sample_sender_continuous(x0, 0.0, rng), UsageError);
}

TEST(SenderDiscrete, MomentsAndDegenerate) {
  Rng rng(11);
  const double alpha = 0.8;
  const std::size_t K = 3;
  const int n = 100000;
  std::vector<std::vector<double>> cols(K, std::vector<double>(n));
  for (int i = 0; i < n; ++i) {
    const SenderSample s = sample_sender_discrete({1}, alpha, K, rng);
    for (std::size_t k = 0; k < K; ++k) cols[k][i] = s.y[k];
  }
  for (std::size_t k = 0; k < K; ++k) {
    const Moments m = moments(cols[k]);
    const double expect = alpha * ((k == 1 ? 3.0 : 0.0) - 1.0);
    EXPECT_LT(std::abs(m.mean - expect), 4.0 * std::sqrt(alpha * K / n));
    EXPECT_NEAR(m.var, alpha * K, 0.05 * alpha * K);
  }
  const SenderSample z = sample_sender_discrete({0, 1}, 0.0, 2, rng);
  for (double v : z.y.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(sample_sender_discrete({2}, 1.0, 2, rng), DataError);
}

TEST(FlowContinuous, PriorAtFinalIndex) {
  Rng rng(12);
  const auto s = AccuracySchedule::continuous(10, 0.02);
  const ContinuousParams p = sample_flow_continuous(Tensor::vector({0.5, -0.5}), 10, s, rng);
  EXPECT_EQ(p.mu, Tensor::vector({0.0, 0.0}));
  EXPECT_EQ(p.rho, 1.0);
}

TEST(FlowContinuous, OneShotMoments) {
  Rng rng(13);
  const auto s = AccuracySchedule::continuous(10, 0.1);
  const int t = 6, n = 100000;
  const double x0 = 0.8, g = s.gamma_at(t);
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = sample_flow_continuous(Tensor::vector({x0}), t, s, rng).mu[0];
  const Moments m = moments(v);
  const double var = g * (1 - g);
  EXPECT_LT(std::abs(m.mean - g * x0), 4.0 * std::sqrt(var / n));
  EXPECT_LT(std::abs(m.var - var), 4.0 * var * std::sqrt(2.0 / (n - 1)));
}

TEST(FlowContinuous, AgreesWithSequentialUpdates) {
  Rng rng(14);
  const auto s = AccuracySchedule::continuous(10, 0.05);
  const Tensor x0 = Tensor::vector({0.9, -0.4, 0.0});
  const int n = 20000;
  for (int t : {8, 5, 1, 0}) {
    std::vector<std::vector<double>> seq(3, std::vector<double>(n)), shot(3, std::vector<double>(n));
    for (int i = 0; i < n; ++i) {
      ContinuousParams p = continuous_prior({3});
      for (int k = s.T(); k > t; --k) p = bayes_update_continuous(p, sample_sender_continuous(x0, s.alpha_at(k), rng).y, s.alpha_at(k));
      EXPECT_NEAR(p.rho, 1.0 + s.beta_at(t), 1e-9);
      const ContinuousParams q = sample_flow_continuous(x0, t, s, rng);
      for (int d = 0; d < 3; ++d) {
        seq[d][i] = p.mu[d];
        shot[d][i] = q.mu[d];
      }
    }
    for (int d = 0; d < 3; ++d) expect_same_moments(seq[d], shot[d]);
  }
}

TEST(FlowDiscrete, UniformAtFinalIndexAndConcentratedAtLargeBeta) {
  Rng rng(15);
  const auto s = AccuracySchedule::discrete(10, 4.0);
  const DiscreteParams p = sample_flow_discrete({0, 2}, 10, s, 3, rng);
  for (double v : p.theta.data()) EXPECT_EQ(v, 1.0 / 3.0);

  const auto big = AccuracySchedule::discrete(2, 100.0);
  int hits = 0;
  for (int i = 0; i < 10000; ++i) {
    const DiscreteParams q = sample_flow_discrete({1}, 0, big, 3, rng);
    expect_simplex(q);
    const double* th = q.theta.values().data();
    const int arg = static_cast<int>(std::max_element(th, th + 3) - th);
    hits += arg == 1;
  }
  EXPECT_GT(hits, 9900);
}

TEST(FlowDiscrete, AgreesWithSequentialUpdates) {
  Rng rng(16);
  const auto s = AccuracySchedule::discrete(10, 3.0);
  const std::size_t K = 3;
  const std::vector<int> x0 = {2};
  const int n = 20000;
  for (int t : {7, 3, 0}) {
    std::vector<std::vector<double>> seq(K, std::vector<double>(n)), shot(K, std::vector<double>(n));
    for (int i = 0; i < n; ++i) {
      DiscreteParams p = discrete_prior(1, K);
      for (int k = s.T(); k > t; --k) p = bayes_update_discrete(p, sample_sender_discrete(x0, s.alpha_at(k), K, rng).y, s.alpha_at(k));
      const DiscreteParams q = sample_flow_discrete(x0, t, s, K, rng);
      for (std::size_t k = 0; k < K; ++k) {
        seq[k][i] = p.theta[k];
        shot[k][i] = q.theta[k];
      }
    }
    for (std::size_t k = 0; k < K; ++k) expect_same_moments(seq[k], shot[k]);
  }
}

TEST(KlContinuous, ClosedFormCases) {
  EXPECT_EQ(kl_sender_receiver_continuous(Tensor::vector({1, 2}), Tensor::vector({1, 2}), 3.0), 0.0);
  EXPECT_NEAR(kl_sender_receiver_continuous(Tensor::vector({1}), Tensor::vector({0}), 2.0), 1.0, 1e-15);
}

TEST(KlContinuous, MatchesMonteCarlo) {
  Rng rng(17);
  const double alpha = 2.0, x0 = 0.4, xh = -0.6;
  const int n = 1000000;
  long double s = 0;
  for (int i = 0; i < n; ++i) {
    const double y = x0 + rng.normal() / std::sqrt(alpha);
    s += -0.5 * alpha * (y - x0) * (y - x0) + 0.5 * alpha * (y - xh) * (y - xh);
  }
  const double closed = kl_sender_receiver_continuous(Tensor::vector({x0}), Tensor::vector({xh}), alpha);
  EXPECT_NEAR(static_cast<double>(s / n), closed, 0.01 * closed);
}

TEST(KlDiscrete, OneHotReceiverGivesZero) {
  Rng rng(18);
  const McEstimate e = kl_sender_receiver_discrete_mc({1}, Tensor::matrix(1, 3, {0, 1, 0}), 0.7, 3, 10000, rng);
  EXPECT_LT(std::abs(e.raw), 3.0 * e.std_error + 1e-12);
  EXPECT_GE(e.reported(), 0.0);
}

TEST(KlDiscrete, MatchesQuadrature) {
  // For K=2 only the projection onto (e0 - e1)/sqrt(2) distinguishes the
  // components; the orthogonal coordinate cancels in the log ratio.
  const double alpha = 1.0, var = 2.0 * alpha, m = std::sqrt(2.0) * alpha;
  auto npdf = [&](double v, double mean) {
    return std::exp(-0.5 * (v - mean) * (v - mean) / var) / std::sqrt(2 * std::numbers::pi * var);
  };
  long double q = 0;
  const double h = 1e-4;
  for (double v = -30; v <= 30; v += h) {
    const double ps = npdf(v, m), pr = 0.5 * npdf(v, m) + 0.5 * npdf(v, -m);
    if (ps > 0) q += ps * (std::log(ps) - std::log(pr)) * h;
  }
  Rng rng(19);
  const McEstimate e = kl_sender_receiver_discrete_mc({0}, Tensor::matrix(1, 2, {0.5, 0.5}), alpha, 2, 100000, rng);
  EXPECT_NEAR(e.raw, static_cast<double>(q), 0.02 * static_cast<double>(q));
}

TEST(KlDiscrete, MassOnWrongClassIncreasesEstimate) {
  Rng a(20), b(20);
  const McEstimate good = kl_sender_receiver_discrete_mc({0}, Tensor::matrix(1, 2, {0.9, 0.1}), 1.0, 2, 100000, a);
  const McEstimate bad = kl_sender_receiver_discrete_mc({0}, Tensor::matrix(1, 2, {0.6, 0.4}), 1.0, 2, 100000, b);
  EXPECT_LT(good.raw, bad.raw);
}

TEST(ReceiverDensity, OneHotMixtureIsGaussian) {
  Rng rng(21);
  const Tensor y = test_support::random_tensor({2, 3}, rng, 2.0);
  const Tensor probs = Tensor::matrix(2, 3, {0, 0, 1, 1, 0, 0});
  const double got = receiver_log_density_discrete(y, probs, 0.6, 3);
  const double expect = sender_log_density_discrete(y, {2, 0}, 0.6, 3);
  EXPECT_NEAR(got, expect, 1e-12);
}

TEST(ReceiverDensity, MatchesDirectSum) {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const double alpha = 0.2 + rng.uniform();
    const Tensor y = test_support::random_tensor({1, 2}, rng);
    const double p0 = rng.uniform();
    const std::vector<double> w = {p0, 1 - p0};
    double direct = 0;
    for (int k = 0; k < 2; ++k) {
      const Tensor mean = sender_mean_discrete({k}, alpha, 2);
      direct += w[k] * std::exp(gaussian_log_density(y.data(), mean.data(), 2 * alpha));
    }
    EXPECT_NEAR(receiver_log_density_discrete(y, Tensor::matrix(1, 2, {w[0], w[1]}), alpha, 2), std::log(direct), 1e-12);
  }
  // Symmetric mixture at the midpoint between the component means.
  const Tensor mid = Tensor::matrix(1, 2, {0, 0});
  const double comp = gaussian_log_density(mid.data(), sender_mean_discrete({0}, 1.0, 2).data(), 2.0);
  EXPECT_NEAR(receiver_log_density_discrete(mid, Tensor::matrix(1, 2, {0.5, 0.5}), 1.0, 2), comp, 1e-12);
}

TEST(ReceiverDensity, IntegratesToOne) {
  // The D=1, K=2 sender lives in two coordinates, so integrate over the plane.
  const Tensor probs = Tensor::matrix(1, 2, {0.3, 0.7});
  const double h = 0.05;
  long double total = 0;
  Tensor y({1, 2});
  for (double a = -12; a <= 12; a += h)
    for (double b = -12; b <= 12; b += h) {
      y[0] = a;
      y[1] = b;
      total += std::exp(receiver_log_density_discrete(y, probs, 1.0, 2)) * h * h;
    }
  EXPECT_NEAR(static_cast<double>(total), 1.0, 1e-3);
}

TEST(ReceiverDensity, TinyProbabilitiesDoNotUnderflow) {
  const Tensor y = Tensor::matrix(1, 2, {40, -40});
  const double v = receiver_log_density_discrete(y, Tensor::matrix(1, 2, {1e-300, 1 - 1e-300}), 1.0, 2);
  EXPECT_TRUE(std::isfinite(v));
}
