#pragma once

#include <cstdint>

#include "paramrel/model.hpp"
#include "paramrel/nn/gradcheck.hpp"
#include "paramrel/objective.hpp"
#include "paramrel/random.hpp"

namespace paramrel {

struct ObjectiveGradCheck {
  nn::GradCheckReport report;
  double loss = 0.0;
};

// Finite-difference check of the full minibatch objective on a tiny model
// (D=4, L=2, T=2, batch 4, hidden width 16). Every weight, output heads included, is drawn at
// random so that no gradient is trivially zero, and all noise is drawn once
// up front so the loss is a deterministic function of the weights.
inline ObjectiveGradCheck check_objective_gradients(DataKind kind, std::uint64_t seed, double eps = 1e-5) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.data_dim = 4;
  cfg.classes = 2;
  cfg.latent_dim = 2;
  cfg.hidden = 16;
  cfg.encoder_layers = 2;
  cfg.decoder_blocks = 1;
  cfg.groups = 4;
  cfg.time_dim = 4;
  cfg.T = 2;
  Rng rng(seed);
  ParamRelModel model(cfg, rng);
  for (const std::string& name : model.params().names()) {
    Tensor t = model.params().at(name);
    for (double& v : t.data()) v = 0.4 * rng.normal();
    model.params().assign(name, std::move(t));
  }
  const AccuracySchedule sched = kind == DataKind::continuous ? AccuracySchedule::continuous(cfg.T, 0.3)
                                                              : AccuracySchedule::discrete(cfg.T, 3.0);
  constexpr std::size_t B = 4;
  Tensor rows({B, cfg.data_dim});
  for (double& v : rows.data()) v = kind == DataKind::continuous ? rng.normal() : static_cast<double>(rng.index(cfg.classes));
  ObjectiveConfig obj;
  obj.weights.T = cfg.T;
  obj.n_mc = 4;
  const BatchDraws draws = draw_batch(cfg, sched, rows, obj.n_mc, rng);
  nn::LossBuilder f = [&](Graph& g, const ParamStore& p) { return batch_loss(g, model, p, draws, obj, sched).total; };
  ObjectiveGradCheck out;
  out.loss = nn::evaluate_loss(f, model.params());
  out.report = nn::grad_check(f, model.params(), eps);
  return out;
}

}  // namespace paramrel
