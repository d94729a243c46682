#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "paramrel/diagnostics.hpp"
#include "paramrel/objective.hpp"
#include "support.hpp"

using namespace paramrel;
using nn::Tensor;

namespace {

Tensor gaussian_sample(std::size_t n, std::size_t L, double shift, Rng& rng) {
  Tensor t({n, L});
  for (double& v : t.data()) v = shift + rng.normal();
  return t;
}

}  // namespace

TEST(RbfKernel, Values) {
  const std::vector<double> a = {1, 2, 3}, b = {1, 2, 3 + 2.0};
  EXPECT_EQ(rbf_kernel(a, a, 0.7), 1.0);
  // |a-b|^2 = 4 = 2 bw^2 at bw = sqrt(2).
  EXPECT_NEAR(rbf_kernel(a, b, std::sqrt(2.0)), std::exp(-1.0), 1e-15);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Tensor x = test_support::random_tensor({4}, rng), y = test_support::random_tensor({4}, rng);
    EXPECT_LT(std::abs(rbf_kernel(x.data(), y.data(), 1.3) - rbf_kernel(y.data(), x.data(), 1.3)), 1e-15);
  }
  EXPECT_THROW(rbf_kernel(a, a, 0.0), UsageError);
}

TEST(Mmd, IdenticalSetsGiveZero) {
  Rng rng(2);
  const Tensor q = gaussian_sample(40, 3, 0.0, rng);
  EXPECT_NEAR(mmd(q, q, 1.0), 0.0, 1e-12);
  EXPECT_THROW(mmd(Tensor({1, 3}), q, 1.0), UsageError);
}

TEST(Mmd, SameDistributionBelowPermutationNull) {
  Rng rng(3);
  const std::size_t n = 500;
  const Tensor q = gaussian_sample(n, 1, 0.0, rng), p = gaussian_sample(n, 1, 0.0, rng);
  const double observed = mmd(q, p, 1.0);
  std::vector<double> pooled(q.data().begin(), q.data().end());
  pooled.insert(pooled.end(), p.data().begin(), p.data().end());
  std::vector<double> null;
  for (int k = 0; k < 200; ++k) {
    rng.shuffle(pooled);
    Tensor a({n, 1}, std::vector<double>(pooled.begin(), pooled.begin() + n));
    Tensor b({n, 1}, std::vector<double>(pooled.begin() + n, pooled.end()));
    null.push_back(mmd(a, b, 1.0));
  }
  std::sort(null.begin(), null.end());
  EXPECT_LT(observed, null[static_cast<std::size_t>(0.99 * 200)]);
}

TEST(Mmd, SeparatedDistributions) {
  Rng rng(4);
  EXPECT_GT(mmd(gaussian_sample(500, 1, 3.0, rng), gaussian_sample(500, 1, 0.0, rng), 1.0), 0.5);
}

TEST(Mmd, NonnegativeOnRandomSets) {
  Rng rng(5);
  for (int i = 0; i < 30; ++i) {
    const Tensor q = gaussian_sample(2 + rng.index(10), 2, rng.normal(), rng);
    const Tensor p = gaussian_sample(2 + rng.index(10), 2, 0.0, rng);
    EXPECT_GE(mmd(q, p, 0.5 + rng.uniform()), -1e-12);
  }
}

TEST(MedianBandwidth, TwoPointSet) {
  // Pooled pairwise squared distances {1, 4, 9, 1, 4, 1}: median 4.
  const Tensor q = Tensor::matrix(2, 1, {0, 1}), p = Tensor::matrix(2, 1, {2, 3});
  EXPECT_NEAR(median_bandwidth(q, p), std::sqrt(2.0), 1e-15);
}

TEST(ElboStep, PerfectModelHasZeroRates) {
  const auto s = AccuracySchedule::continuous(4, 0.1);
  const Tensor x0 = Tensor::vector({0.2, -0.4});
  ElboStepInputs in;
  in.t = 2;
  in.latent = {Tensor({1, 3}), Tensor({1, 3})};
  in.flow_kl_single = continuous_step_kl(x0, x0, in.t, s);
  const LossBreakdown b = elbo_step_loss(in, s);
  EXPECT_EQ(b.flow_kl, 0.0);
  EXPECT_EQ(b.latent_rate, 0.0);
}

TEST(ElboStep, SingleStepHandComputation) {
  const auto s = AccuracySchedule::continuous(1, 0.2);
  const Tensor x0 = Tensor::vector({0.5, -1.0}), xh = Tensor::vector({0.1, -0.5});
  ElboStepInputs in;
  in.t = 1;
  in.latent = {Tensor::matrix(1, 1, {0.3}), Tensor::matrix(1, 1, {-0.2})};
  in.flow_kl_single = continuous_step_kl(x0, xh, 1, s);
  in.distortion = 0.125;
  const double alpha = std::pow(0.2, -2.0) - 1.0;
  const double hand = 0.5 * alpha * (0.4 * 0.4 + 0.5 * 0.5) + 0.5 * (std::exp(-0.2) + 0.09 - 1 + 0.2) + 0.125;
  EXPECT_NEAR(elbo_step_loss(in, s).total, hand, 1e-10);
}

TEST(ElboStep, KlLinearInAlpha) {
  const Tensor x0 = Tensor::vector({0.5}), xh = Tensor::vector({-0.5});
  EXPECT_NEAR(bfn::kl_sender_receiver_continuous(x0, xh, 2 * 1.7), 2 * bfn::kl_sender_receiver_continuous(x0, xh, 1.7), 1e-15);
}

TEST(ElboStep, UniformStepEstimateMatchesFullSum) {
  const auto s = AccuracySchedule::continuous(3, 0.1);
  const Tensor x0 = Tensor::vector({0.6, -0.2});
  auto xhat = [](int t) { return Tensor::vector({0.1 * t, 0.05 * t * t}); };
  auto latent = [](int t) { return LatentGaussian{Tensor::matrix(1, 1, {0.2 * t}), Tensor::matrix(1, 1, {-0.1 * t})}; };

  double direct = 0;
  for (int t = 1; t <= 3; ++t) direct += continuous_step_kl(x0, xhat(t), t, s) + kl_latent_prior(latent(t));

  // Exact enumeration: each t has probability 1/3.
  double expected = 0;
  for (int t = 1; t <= 3; ++t) {
    ElboStepInputs in{t, latent(t), continuous_step_kl(x0, xhat(t), t, s), 0.0};
    expected += elbo_step_loss(in, s).total / 3.0;
  }
  EXPECT_NEAR(expected, direct, 1e-12);

  Rng rng(6);
  const int n = 60000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const int t = rng.integer(1, 3);
    const double v = elbo_step_loss({t, latent(t), continuous_step_kl(x0, xhat(t), t, s), 0.0}, s).total;
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n, se = std::sqrt((sum2 / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean - direct), 4 * se);
}

TEST(PlusLoss, CoefficientAlgebra) {
  LossWeights w{0.0, 1.0, 4};
  EXPECT_NEAR(w.rate_coefficient(), 0.25, 1e-15);
  EXPECT_NEAR(w.mmd_coefficient(), 0.0, 1e-15);
  LossWeights v{1.0, 0.3, 4};
  EXPECT_NEAR(v.rate_coefficient(), 0.0, 1e-15);
  EXPECT_NEAR(v.mmd_coefficient(), 0.3 / 4, 1e-15);
  EXPECT_TRUE((LossWeights{0.2, 0.1, 4}).mmd_coefficient_negative());
  EXPECT_FALSE(LossWeights{}.mmd_coefficient_negative());
  EXPECT_THROW((LossWeights{1.0, 0.1, 4}).validate(), ConfigError);
  EXPECT_THROW((LossWeights{0.5, 0.0, 4}).validate(), ConfigError);
}

TEST(PlusLoss, TotalRecomputesAndNeedsBatch) {
  Rng rng(7);
  LossBreakdown terms{1.5, 0.7, 0.0, 0.2, 0.0};
  const LossWeights w{};
  const LossBreakdown b = paramrel_plus_loss(terms, gaussian_sample(8, 2, 0.5, rng), gaussian_sample(8, 2, 0, rng), w, 1.0);
  EXPECT_NEAR(recompute_total(b, w.rate_coefficient(), w.mmd_coefficient()), b.total, 1e-12);
  EXPECT_GT(b.mmd, 0.0);
  EXPECT_THROW(paramrel_plus_loss(terms, Tensor({1, 2}), Tensor({3, 2}), w, 1.0), UsageError);
}

TEST(BatchLoss, FreshContinuousModelMatchesHandFlowKl) {
  Rng rng(8);
  ModelConfig cfg;
  cfg.data_dim = 4;
  cfg.latent_dim = 2;
  cfg.hidden = 8;
  cfg.time_dim = 4;
  cfg.T = 5;
  ParamRelModel model(cfg, rng);
  const auto s = AccuracySchedule::continuous(5, 0.1);
  const Tensor rows = test_support::random_tensor({3, 4}, rng, 0.5);
  const BatchDraws d = draw_batch(cfg, s, rows, 1, rng);
  ObjectiveConfig obj;
  obj.weights.T = 5;
  nn::Graph g;
  const BatchLoss bl = batch_loss(g, model, model.params(), d, obj, s);

  // A fresh model predicts zero noise and the prior latent.
  double flow = 0, dist = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    const double gt = s.gamma_at(d.t[b]), g0 = s.gamma_at(0);
    for (std::size_t j = 0; j < 4; ++j) {
      const double xh = gt > kGammaMin ? d.flow_t.mu.at(b, j) / gt : 0.0;
      flow += 5 * 0.5 * s.alpha_at(d.t[b]) * std::pow(rows.at(b, j) - xh, 2);
      dist += std::pow(rows.at(b, j) - d.flow_0.mu.at(b, j) / g0, 2);
    }
  }
  EXPECT_NEAR(bl.parts.flow_kl, flow / 3, 1e-9 * (1 + flow));
  EXPECT_NEAR(bl.parts.distortion_nll, dist / 12, 1e-12);
  EXPECT_NEAR(bl.parts.latent_rate, 0.0, 1e-15);
  EXPECT_NEAR(recompute_total(bl.parts, obj.weights.rate_coefficient(), obj.weights.mmd_coefficient()), bl.parts.total, 1e-12);
}

TEST(BatchLoss, DiscreteTermsAndBatchGuard) {
  Rng rng(9);
  ModelConfig cfg;
  cfg.kind = DataKind::discrete;
  cfg.data_dim = 4;
  cfg.classes = 3;
  cfg.latent_dim = 2;
  cfg.hidden = 8;
  cfg.time_dim = 4;
  cfg.T = 4;
  ParamRelModel model(cfg, rng);
  const auto s = AccuracySchedule::discrete(4, 3.0);
  const Tensor rows = Tensor::matrix(2, 4, {0, 1, 2, 1, 2, 2, 0, 0});
  const BatchDraws d = draw_batch(cfg, s, rows, 4, rng);
  ObjectiveConfig obj;
  obj.weights.T = 4;
  nn::Graph g;
  const BatchLoss bl = batch_loss(g, model, model.params(), d, obj, s);
  // Uniform output probabilities: cross-entropy log K per dimension, summed per example.
  EXPECT_NEAR(bl.parts.distortion_nll, 4 * std::log(3.0), 1e-12);
  EXPECT_NEAR(recompute_total(bl.parts, obj.weights.rate_coefficient(), obj.weights.mmd_coefficient()), bl.parts.total, 1e-12);

  const BatchDraws one = draw_batch(cfg, s, Tensor::matrix(1, 4, {0, 1, 2, 1}), 4, rng);
  nn::Graph g2;
  EXPECT_THROW(batch_loss(g2, model, model.params(), one, obj, s), UsageError);
  EXPECT_THROW(draw_batch(cfg, s, Tensor::matrix(1, 4, {0, 1, 3, 1}), 4, rng), DataError);
}

TEST(ObjectiveGradients, TinyModelsPassFiniteDifferences) {
  for (DataKind kind : {DataKind::continuous, DataKind::discrete}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const ObjectiveGradCheck r = check_objective_gradients(kind, seed);
      EXPECT_LT(r.report.max_rel_error, 1e-4) << to_string(kind) << " seed " << seed << " " << r.report.worst_param;
      EXPECT_TRUE(std::isfinite(r.loss));
    }
  }
}
