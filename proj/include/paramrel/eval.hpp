#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "paramrel/bfn.hpp"
#include "paramrel/error.hpp"
#include "paramrel/model.hpp"
#include "paramrel/random.hpp"
#include "paramrel/schedule.hpp"

namespace paramrel::eval {

using nn::Tensor;

enum class SyntheticKind { blobs_continuous, shapes_binary };

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
  if (s == "blobs_continuous") return SyntheticKind::blobs_continuous;
  if (s == "shapes_binary") return SyntheticKind::shapes_binary;
  throw UsageError("unknown synthetic dataset kind '" + s + "' (expected blobs_continuous or shapes_binary)");
}

inline const char* to_string(SyntheticKind k) {
  return k == SyntheticKind::blobs_continuous ? "blobs_continuous" : "shapes_binary";
}

struct FactorDataset {
  SyntheticKind kind = SyntheticKind::blobs_continuous;
  Tensor samples;                        // [N x 64]
  std::vector<std::vector<int>> factors;  // [N][F]
  std::vector<std::string> factor_names;

  std::size_t size() const { return factors.size(); }

  std::vector<int> factor(std::size_t f) const {
    std::vector<int> v(factors.size());
    for (std::size_t i = 0; i < factors.size(); ++i) v[i] = factors[i].at(f);
    return v;
  }

  std::size_t factor_index(const std::string& name) const {
    for (std::size_t i = 0; i < factor_names.size(); ++i)
      if (factor_names[i] == name) return i;
    throw UsageError("dataset has no factor named '" + name + "'");
  }
};

inline constexpr std::size_t kImageSide = 8;

// 8x8 images. Every combination of factor values is used in turn so each
// value appears equally often, then the rows are shuffled.
//   blobs_continuous: Gaussian blob at center (1.5 + 1.5 fx, 1.5 + 1.5 fy),
//     amplitude +1 (intensity 1) or -1 (intensity 0), light noise, in [-1, 1].
//   shapes_binary: filled 5x5 square or 5x5 plus sign with its box at offset
//     (fx, fy), in {0, 1}.
inline FactorDataset make_synthetic(SyntheticKind kind, std::size_t N, std::uint64_t seed) {
  if (N < 200) throw UsageError("make_synthetic needs N >= 200, got " + std::to_string(N));
  constexpr std::size_t S = kImageSide;
  Rng rng(seed);
  FactorDataset ds;
  ds.kind = kind;
  ds.samples = Tensor({N, S * S});
  ds.factor_names = kind == SyntheticKind::blobs_continuous ? std::vector<std::string>{"x_position", "y_position", "intensity"}
                                                            : std::vector<std::string>{"shape", "x_position", "y_position"};
  std::vector<std::vector<int>> combos;
  for (int a = 0; a < (kind == SyntheticKind::blobs_continuous ? 4 : 2); ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < (kind == SyntheticKind::blobs_continuous ? 2 : 4); ++c) combos.push_back({a, b, c});
  std::vector<std::size_t> order(N);
  for (std::size_t i = 0; i < N; ++i) order[i] = i % combos.size();
  rng.shuffle(order);

  for (std::size_t n = 0; n < N; ++n) {
    const std::vector<int>& f = combos[order[n]];
    ds.factors.push_back(f);
    auto img = ds.samples.row(n);
    if (kind == SyntheticKind::blobs_continuous) {
      const double cx = 1.5 + 1.5 * f[0], cy = 1.5 + 1.5 * f[1];
      const double amp = f[2] == 1 ? 1.0 : -1.0;
      constexpr double sigma = 1.2, noise = 0.01;
      for (std::size_t r = 0; r < S; ++r)
        for (std::size_t c = 0; c < S; ++c) {
          const double d2 = (static_cast<double>(c) - cx) * (static_cast<double>(c) - cx) +
                            (static_cast<double>(r) - cy) * (static_cast<double>(r) - cy);
          const double v = amp * std::exp(-d2 / (2.0 * sigma * sigma)) + noise * rng.normal();
          img[r * S + c] = std::clamp(v, -1.0, 1.0);
        }
    } else {
      const auto ox = static_cast<std::size_t>(f[1]), oy = static_cast<std::size_t>(f[2]);
      for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 5; ++c) {
          const bool on = f[0] == 0 || r == 2 || c == 2;
          if (on) img[(oy + r) * S + ox + c] = 1.0;
        }
    }
  }
  return ds;
}

// Rank-based AUROC with average ranks for ties.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DimensionError("auroc: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw UsageError("auroc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("auroc is undefined when only one class is present");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[idx[k]] == 1) rank_sum += avg_rank;
    i = j + 1;
  }
  const auto np = static_cast<double>(n_pos), nn_ = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn_);
}

struct LogisticFit {
  Eigen::VectorXd mean, scale;  // feature standardization
  Eigen::VectorXd w;            // weights on standardized features
  double bias = 0.0;
  std::size_t iterations = 0;
  bool converged = false;

  double score(std::span<const double> x) const {
    double s = bias;
    for (Eigen::Index j = 0; j < w.size(); ++j) s += w[j] * (x[static_cast<std::size_t>(j)] - mean[j]) / scale[j];
    return s;
  }
};

inline constexpr double kProbeL2 = 1e-3;
inline constexpr double kProbeTolerance = 1e-6;
inline constexpr std::size_t kProbeMaxIterations = 20000;

// L2-regularized logistic regression by full-batch gradient descent with
// step 1/Lipschitz, stopped when the gradient norm falls below tolerance.
inline LogisticFit fit_logistic(const Tensor& z, const std::vector<int>& labels, const std::vector<std::size_t>& rows) {
  const auto L = static_cast<Eigen::Index>(z.dim(1));
  const auto n = static_cast<Eigen::Index>(rows.size());
  LogisticFit fit;
  Eigen::MatrixXd X(n, L);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < L; ++j) X(i, j) = z.at(rows[static_cast<std::size_t>(i)], static_cast<std::size_t>(j));
    y[i] = labels[rows[static_cast<std::size_t>(i)]];
  }
  fit.mean = X.colwise().mean();
  X.rowwise() -= fit.mean.transpose();
  fit.scale = (X.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt();
  for (Eigen::Index j = 0; j < L; ++j) {
    if (!(fit.scale[j] > 1e-12)) fit.scale[j] = 1.0;
    X.col(j) /= fit.scale[j];
  }
  // Augment with a constant column for the bias.
  Eigen::MatrixXd A(n, L + 1);
  A << X, Eigen::VectorXd::Ones(n);
  const Eigen::MatrixXd H = A.transpose() * A / static_cast<double>(n);
  const double lipschitz = 0.25 * Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues().maxCoeff() + kProbeL2;
  const double step = 1.0 / lipschitz;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(L + 1);
  Eigen::VectorXd reg = Eigen::VectorXd::Constant(L + 1, kProbeL2);
  reg[L] = 0.0;
  for (fit.iterations = 0; fit.iterations < kProbeMaxIterations; ++fit.iterations) {
    const Eigen::VectorXd logits = A * theta;
    const Eigen::VectorXd p = logits.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    const Eigen::VectorXd grad = A.transpose() * (p - y) / static_cast<double>(n) + reg.cwiseProduct(theta);
    if (grad.norm() < kProbeTolerance) {
      fit.converged = true;
      break;
    }
    theta -= step * grad;
  }
  fit.w = theta.head(L);
  fit.bias = theta[L];
  return fit;
}

struct ProbeResult {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over folds
  std::vector<double> fold_auroc;
  bool all_converged = true;
};

// k-fold cross-validated AUROC of a logistic probe on z.
inline ProbeResult latent_probe(const Tensor& z, const std::vector<int>& labels, std::size_t folds, std::uint64_t seed) {
  if (z.rank() != 2 || z.dim(0) != labels.size()) throw DimensionError("latent_probe: z rows must match labels");
  if (folds < 2) throw UsageError("latent_probe: folds must be >= 2");
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  ProbeResult res;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < order.size(); ++i) (i % folds == f ? test : train).push_back(order[i]);
    const LogisticFit fit = fit_logistic(z, labels, train);
    res.all_converged = res.all_converged && fit.converged;
    std::vector<double> scores;
    std::vector<int> held;
    for (std::size_t i : test) {
      scores.push_back(fit.score(z.row(i)));
      held.push_back(labels[i]);
    }
    res.fold_auroc.push_back(auroc(scores, held));
  }
  const auto k = static_cast<double>(folds);
  res.mean = std::accumulate(res.fold_auroc.begin(), res.fold_auroc.end(), 0.0) / k;
  double ss = 0.0;
  for (double a : res.fold_auroc) ss += (a - res.mean) * (a - res.mean);
  res.std = std::sqrt(ss / (k - 1.0));
  return res;
}

// Held-out R^2 of a linear regression from z to each factor, clipped to
// [0, 1]. Factors with a single distinct value yield nullopt.
inline std::vector<std::optional<double>> informativeness(const Tensor& z, const std::vector<std::vector<int>>& factors,
                                                          std::uint64_t seed = 0) {
  const std::size_t N = z.dim(0);
  if (z.rank() != 2 || factors.size() != N) throw DimensionError("informativeness: z rows must match factor rows");
  if (N < 10) throw UsageError("informativeness needs at least 10 rows");
  const std::size_t F = factors.front().size();
  const auto L = static_cast<Eigen::Index>(z.dim(1));
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  const std::size_t n_test = N / 5, n_train = N - n_test;
  auto design = [&](std::size_t from, std::size_t count) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(count), L + 1);
    for (std::size_t i = 0; i < count; ++i) {
      for (Eigen::Index j = 0; j < L; ++j) X(static_cast<Eigen::Index>(i), j) = z.at(order[from + i], static_cast<std::size_t>(j));
      X(static_cast<Eigen::Index>(i), L) = 1.0;
    }
    return X;
  };
  const Eigen::MatrixXd Xtr = design(0, n_train), Xte = design(n_train, n_test);
  Eigen::MatrixXd G = Xtr.transpose() * Xtr;
  G.diagonal().array() += 1e-8 * static_cast<double>(n_train);
  const Eigen::LDLT<Eigen::MatrixXd> solver(G);

  std::vector<std::optional<double>> scores;
  for (std::size_t f = 0; f < F; ++f) {
    Eigen::VectorXd ytr(static_cast<Eigen::Index>(n_train)), yte(static_cast<Eigen::Index>(n_test));
    for (std::size_t i = 0; i < n_train; ++i) ytr[static_cast<Eigen::Index>(i)] = factors[order[i]].at(f);
    for (std::size_t i = 0; i < n_test; ++i) yte[static_cast<Eigen::Index>(i)] = factors[order[n_train + i]].at(f);
    if (ytr.maxCoeff() == ytr.minCoeff() || yte.maxCoeff() == yte.minCoeff()) {
      scores.push_back(std::nullopt);
      continue;
    }
    const Eigen::VectorXd w = solver.solve(Xtr.transpose() * ytr);
    const double ss_res = (Xte * w - yte).squaredNorm();
    const double ss_tot = (yte.array() - yte.mean()).matrix().squaredNorm();
    scores.push_back(std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0));
  }
  return scores;
}

enum class ReconMetric { mse, bit_accuracy };

inline double reconstruction_error(const Tensor& x, const Tensor& xhat, ReconMetric metric, DataKind kind) {
  if (x.size() != xhat.size()) throw DimensionError("reconstruction_error: sizes " + nn::shape_str(x.shape()) + " vs " + nn::shape_str(xhat.shape()));
  if (x.size() == 0) throw UsageError("reconstruction_error on empty input");
  if (metric == ReconMetric::mse) {
    if (kind != DataKind::continuous) throw UsageError("mse is defined for continuous data; use bit_accuracy");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - xhat[i]) * (x[i] - xhat[i]);
    return s / static_cast<double>(x.size());
  }
  if (kind != DataKind::discrete) throw UsageError("bit_accuracy is defined for discrete data; use mse");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool bx = x[i] == 1.0, bh = xhat[i] == 1.0;
    if ((x[i] != 0.0 && !bx) || (xhat[i] != 0.0 && !bh)) throw UsageError("bit_accuracy needs binary {0,1} values");
    hits += bx == bh;
  }
  return static_cast<double>(hits) / static_cast<double>(x.size());
}

// Encoder means at step t_probe for each row, with theta drawn from p_F(x; t_probe).
inline Tensor probe_latents(const ParamRelModel& model, const AccuracySchedule& sched, const Tensor& data, int t_probe, Rng& rng,
                            std::size_t chunk = 256) {
  const ModelConfig& cfg = model.config();
  const std::size_t N = data.dim(0), D = cfg.data_dim, L = cfg.latent_dim;
  Tensor z({N, L});
  for (std::size_t start = 0; start < N; start += chunk) {
    const std::size_t B = std::min(chunk, N - start);
    Tensor rows({B, D}, std::vector<double>(data.data().begin() + static_cast<std::ptrdiff_t>(start * D),
                                            data.data().begin() + static_cast<std::ptrdiff_t>((start + B) * D)));
    Tensor mean;
    if (cfg.kind == DataKind::continuous) {
      mean = model.encode(bfn::sample_flow_continuous(rows, t_probe, sched, rng), t_probe).mean;
    } else {
      std::vector<int> classes(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) classes[i] = static_cast<int>(std::lround(rows[i]));
      mean = model.encode(bfn::sample_flow_discrete(classes, t_probe, sched, cfg.classes, rng), t_probe).mean;
    }
    std::copy(mean.data().begin(), mean.data().end(), z.data().begin() + static_cast<std::ptrdiff_t>(start * L));
  }
  return z;
}

}  // namespace paramrel::eval
