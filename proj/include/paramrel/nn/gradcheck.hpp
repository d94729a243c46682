#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "paramrel/nn/autodiff.hpp"

namespace paramrel::nn {

// Builds a scalar loss on a fresh graph from the given parameters.
using LossBuilder = std::function<Var(Graph&, const ParamStore&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

inline double evaluate_loss(const LossBuilder& f, const ParamStore& params) {
  Graph g;
  return f(g, params).value()[0];
}

inline ParamGrads analytic_grads(const LossBuilder& f, const ParamStore& params) {
  Graph g;
  Var loss = f(g, params);
  g.backward(loss);
  return g.param_grads(params);
}

// Max over every parameter element of
// |analytic - central_diff| / max(1e-8, |analytic| + |central_diff|).
inline GradCheckReport grad_check(const LossBuilder& f, ParamStore params, double eps = 1e-5) {
  const ParamGrads grads = analytic_grads(f, params);
  GradCheckReport report;
  for (const std::string& name : params.names()) {
    const Tensor& ga = grads.at(name);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      double& p = params.at(name)[i];
      const double saved = p;
      p = saved + eps;
      const double up = evaluate_loss(f, params);
      p = saved - eps;
      const double down = evaluate_loss(f, params);
      p = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(ga[i] - numeric) / std::max(1e-8, std::abs(ga[i]) + std::abs(numeric));
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = name;
        report.worst_index = i;
        report.worst_analytic = ga[i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace paramrel::nn
