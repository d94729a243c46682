#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include "paramrel/diagnostics.hpp"
#include "paramrel/eval.hpp"
#include "paramrel/io/checkpoint.hpp"
#include "paramrel/io/config.hpp"
#include "paramrel/io/idx.hpp"
#include "paramrel/io/image.hpp"
#include "paramrel/pipeline.hpp"

namespace paramrel::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

struct CommonOptions {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out_dir = "run";
  std::vector<std::string> overrides;
  std::string checkpoint;
};

struct Data {
  Tensor samples;  // [N x D]; discrete entries are class indices
  std::size_t side = eval::kImageSide;
  std::optional<eval::FactorDataset> factors;
  std::optional<std::vector<int>> labels;
};

inline Data load_data(const io::RunConfig& cfg) {
  Data d;
  if (cfg.get("data.source") == "idx") {
    io::IdxDataset ds = io::load_idx(cfg.get("data.idx_images"), cfg.kind(), cfg.get("data.idx_labels"));
    if (cfg.kind() == DataKind::discrete && cfg.get_size("data.classes") != 2) {
      throw ConfigError("config key 'data.classes' must be 2 for binarized IDX data");
    }
    d.samples = std::move(ds.samples);
    d.side = ds.rows == ds.cols ? ds.rows : 0;
    d.labels = std::move(ds.labels);
    return d;
  }
  std::string kind = cfg.get("data.synthetic");
  if (kind == "auto") kind = cfg.kind() == DataKind::continuous ? "blobs_continuous" : "shapes_binary";
  eval::FactorDataset ds = eval::make_synthetic(eval::parse_synthetic_kind(kind), cfg.get_size("data.N"), cfg.get_uint("data.seed"));
  d.samples = ds.samples;
  d.factors = std::move(ds);
  return d;
}

inline Tensor rows_of(const Tensor& data, std::size_t first, std::size_t count) {
  const std::size_t D = data.dim(1);
  if (first + count > data.dim(0)) {
    throw UsageError("example range [" + std::to_string(first) + ", " + std::to_string(first + count) + ") exceeds the " +
                     std::to_string(data.dim(0)) + " available rows");
  }
  return Tensor({count, D}, std::vector<double>(data.data().begin() + static_cast<std::ptrdiff_t>(first * D),
                                                data.data().begin() + static_cast<std::ptrdiff_t>((first + count) * D)));
}

class Session {
 public:
  Session(const CommonOptions& opt, std::ostream& out, std::ostream& err) : opt_(opt), out_(out), err_(err) {
    std::string config_path = opt.config_path;
    // A checkpoint without an explicit config reuses the resolved config of its run.
    if (config_path.empty() && !opt.checkpoint.empty()) {
      const fs::path sibling = fs::path(opt.checkpoint).parent_path() / "config.txt";
      if (fs::exists(sibling)) config_path = sibling.string();
    }
    std::vector<std::string> overrides = opt.overrides;
    if (opt.seed) overrides.push_back("train.seed=" + std::to_string(*opt.seed));
    cfg_ = io::RunConfig::load(config_path, overrides);
    for (const std::string& w : cfg_.warnings()) err_ << "warning: " << w << "\n";
    fs::create_directories(opt.out_dir);
    io::write_text(path("config.txt"), cfg_.resolved_text());
    // Timestamps live only in the log so every other artifact stays reproducible.
    log_.open(path("log.txt"), std::ios::app);
    log("config hash " + cfg_.hash_hex());
  }

  const io::RunConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return cfg_.get_uint("train.seed"); }
  std::string path(const std::string& name) const { return (fs::path(opt_.out_dir) / name).string(); }
  std::ostream& out() { return out_; }
  void warn(const std::string& msg) {
    err_ << "warning: " << msg << "\n";
    log("warning: " + msg);
  }

  void log(const std::string& msg) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%S", std::gmtime(&now));
    log_ << stamp << " " << msg << "\n";
  }

  ParamRelModel load_model(std::size_t data_dim) const {
    if (opt_.checkpoint.empty()) throw UsageError("--checkpoint is required for this command");
    return ParamRelModel(cfg_.model_config(data_dim), io::load_checkpoint(opt_.checkpoint));
  }

  void write_grid(const std::string& name, const Tensor& samples, std::size_t side, std::size_t columns) {
    if (side == 0) return;
    const bool binary = cfg_.kind() == DataKind::discrete;
    io::write_pgm(io::tile_images(samples, side, columns, binary ? 0.5 : 0.0), path(name), binary ? 0.0 : -1.0, 1.0);
  }

 private:
  CommonOptions opt_;
  std::ostream& out_;
  std::ostream& err_;
  io::RunConfig cfg_;
  std::ofstream log_;
};

inline std::vector<io::CsvRow> sample_rows(const std::vector<Tensor>& outputs, const std::vector<double>& keys) {
  std::vector<io::CsvRow> rows;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    for (std::size_t j = 0; j < outputs[i].size(); ++j)
      rows.push_back({std::to_string(i), io::format_number(keys[i]), std::to_string(j), io::format_number(outputs[i][j])});
  return rows;
}

inline Tensor stack(const std::vector<Tensor>& rows) {
  const std::size_t D = rows.front().size();
  Tensor t({rows.size(), D});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].data().begin(), rows[i].data().end(), t.row(i).begin());
  return t;
}

inline int cmd_train(Session& s) {
  const io::RunConfig& cfg = s.config();
  const Data data = load_data(cfg);
  const ModelConfig mcfg = cfg.model_config(data.samples.dim(1));
  const TrainConfig tcfg = cfg.train_config();
  if (tcfg.objective.weights.mmd_coefficient_negative()) {
    s.warn("(mi_weight + tc_weight - 1) < 0, so the MMD term rewards divergence from the prior");
  }
  Rng init = Rng(tcfg.seed).split(0);
  ParamRelModel model(mcfg, init);
  Trainer trainer(model, cfg.schedule(), tcfg);
  std::vector<io::CsvRow> metrics;
  s.log("training started");
  const auto epochs = trainer.fit(data.samples, [&](const StepRecord& r) {
    metrics.push_back({std::to_string(r.step), io::format_number(r.loss.flow_kl), io::format_number(r.loss.latent_rate),
                       io::format_number(r.loss.mmd), io::format_number(r.loss.distortion_nll), io::format_number(r.loss.total)});
  });
  io::write_csv(s.path("metrics.csv"), {"step", "flow_kl", "latent_rate", "mmd", "distortion", "total"}, metrics);
  std::vector<io::CsvRow> erows;
  for (const auto& e : epochs) erows.push_back({std::to_string(e.epoch), std::to_string(e.steps), io::format_number(e.mean_total)});
  io::write_csv(s.path("epochs.csv"), {"epoch", "steps", "mean_total"}, erows);
  io::save_checkpoint(model.params(), s.path("checkpoint.prlc"));
  s.log("training finished after " + std::to_string(trainer.steps_taken()) + " steps");
  for (const auto& e : epochs) s.out() << "epoch " << e.epoch << " steps " << e.steps << " mean_total " << e.mean_total << "\n";
  s.out() << "wrote " << s.path("checkpoint.prlc") << "\n";
  return kExitOk;
}

inline int cmd_sample(Session& s, std::size_t n) {
  const io::RunConfig& cfg = s.config();
  const Data data = load_data(cfg);
  const ParamRelModel model = s.load_model(data.samples.dim(1));
  Rng rng = Rng(s.seed()).split(10);
  const SampleResult res = generate(model, cfg.schedule(), n, rng, cfg.z_mode());
  std::vector<io::CsvRow> rows;
  for (std::size_t i = 0; i < res.samples.dim(0); ++i)
    for (std::size_t j = 0; j < res.samples.dim(1); ++j)
      rows.push_back({std::to_string(i), std::to_string(j), io::format_number(res.samples.at(i, j))});
  io::write_csv(s.path("samples.csv"), {"sample", "dim", "value"}, rows);
  std::vector<io::CsvRow> traj;
  for (const auto& r : res.trajectory.records)
    traj.push_back({std::to_string(r.t), io::format_number(r.rho), io::format_number(r.alpha)});
  io::write_csv(s.path("sample_trajectory.csv"), {"t", "rho", "alpha"}, traj);
  s.write_grid("samples.pgm", res.samples, data.side, 8);
  s.out() << "wrote " << n << " samples to " << s.path("samples.csv") << "\n";
  return kExitOk;
}

inline int cmd_reconstruct(Session& s, std::size_t first, std::size_t n) {
  const io::RunConfig& cfg = s.config();
  const Data data = load_data(cfg);
  const ParamRelModel model = s.load_model(data.samples.dim(1));
  Rng rng = Rng(s.seed()).split(11);
  const Tensor x = rows_of(data.samples, first, n);
  const Tensor xhat = reconstruct(model, cfg.schedule(), x, rng);
  const bool cont = cfg.kind() == DataKind::continuous;
  const double err = eval::reconstruction_error(x, xhat, cont ? eval::ReconMetric::mse : eval::ReconMetric::bit_accuracy, cfg.kind());
  io::write_csv(s.path("reconstruction.csv"), {"metric", "value", "std", "config_hash"},
                {{cont ? "mse" : "bit_accuracy", io::format_number(err), "", cfg.hash_hex()}});
  Tensor pairs({2 * n, x.dim(1)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(x.row(i).begin(), x.row(i).end(), pairs.row(2 * i).begin());
    std::copy(xhat.row(i).begin(), xhat.row(i).end(), pairs.row(2 * i + 1).begin());
  }
  s.write_grid("reconstruction.pgm", pairs, data.side, 2);
  s.out() << (cont ? "mse " : "bit_accuracy ") << err << "\n";
  return kExitOk;
}

inline int cmd_interpolate(Session& s, std::size_t a, std::size_t b, const std::string& mode, std::size_t m) {
  const io::RunConfig& cfg = s.config();
  const Data data = load_data(cfg);
  const ParamRelModel model = s.load_model(data.samples.dim(1));
  Rng rng = Rng(s.seed()).split(12);
  const Interpolation res = interpolate(model, cfg.schedule(), rows_of(data.samples, a, 1), rows_of(data.samples, b, 1),
                                        mode == "slerp" ? InterpMode::slerp : InterpMode::linear, m, rng);
  if (res.fell_back_to_linear) s.warn("degenerate angle between endpoints, used linear interpolation");
  io::write_csv(s.path("interpolation.csv"), {"step", "lambda", "dim", "value"}, sample_rows(res.outputs, res.lambdas));
  s.write_grid("interpolation.pgm", stack(res.outputs), data.side, m);
  s.out() << "wrote " << m << " interpolants to " << s.path("interpolation.csv") << "\n";
  return kExitOk;
}

inline int cmd_traverse(Session& s, std::size_t index, std::size_t dim, double lo, double hi, std::size_t m) {
  const io::RunConfig& cfg = s.config();
  const Data data = load_data(cfg);
  const ParamRelModel model = s.load_model(data.samples.dim(1));
  Rng rng = Rng(s.seed()).split(13);
  const Traversal res = traverse(model, cfg.schedule(), rows_of(data.samples, index, 1), dim, lo, hi, m, cfg.t_probe(), rng);
  io::write_csv(s.path("traversal.csv"), {"step", "z_value", "dim", "value"}, sample_rows(res.outputs, res.values));
  if (cfg.kind() == DataKind::continuous) {
    s.write_grid("traversal.pgm", stack(res.outputs), data.side, m);
  } else if (data.side) {
    io::write_pgm(io::tile_images(stack(res.outputs), data.side, m, 0.5), s.path("traversal.pgm"), 0.0, 1.0);
  }
  s.out() << "traversed z[" << dim << "] over [" << lo << ", " << hi << "] in " << m << " steps\n";
  return kExitOk;
}

inline std::vector<int> probe_labels(const io::RunConfig& cfg, const Data& data, std::string& name) {
  name = cfg.get("eval.probe_factor");
  if (data.factors) {
    if (name == "auto") name = data.factors->kind == eval::SyntheticKind::blobs_continuous ? "intensity" : "shape";
    const std::vector<int> f = data.factors->factor(data.factors->factor_index(name));
    int mx = 0;
    for (int v : f) mx = std::max(mx, v);
    // Multi-valued factors are probed as the upper half versus the lower half.
    std::vector<int> y(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) y[i] = mx == 1 ? f[i] : (2 * f[i] > mx ? 1 : 0);
    return y;
  }
  if (!data.labels) throw UsageError("probe needs factors or an IDX label file (data.idx_labels)");
  int target = 0;
  if (name != "auto") {
    if (name.rfind("label_", 0) != 0) throw ConfigError("config key 'eval.probe_factor' must be auto or label_<k> for IDX data");
    target = std::stoi(name.substr(6));
  }
  name = "label_" + std::to_string(target);
  std::vector<int> y;
  for (int l : *data.labels) y.push_back(l == target ? 1 : 0);
  return y;
}

inline int cmd_probe(Session& s) {
  const io::RunConfig& cfg = s.config();
  const Data data = load_data(cfg);
  const ParamRelModel model = s.load_model(data.samples.dim(1));
  const AccuracySchedule sched = cfg.schedule();
  Rng rng = Rng(s.seed()).split(14);
  const Tensor z = eval::probe_latents(model, sched, data.samples, cfg.t_probe(), rng);
  std::string factor;
  std::vector<int> labels = probe_labels(cfg, data, factor);
  const std::size_t folds = cfg.get_size("eval.folds");
  const eval::ProbeResult probe = eval::latent_probe(z, labels, folds, s.seed());
  Rng perm_rng = Rng(s.seed()).split(15);
  perm_rng.shuffle(labels);
  const eval::ProbeResult control = eval::latent_probe(z, labels, folds, s.seed());
  const std::string h = cfg.hash_hex();
  std::vector<io::CsvRow> rows = {
      {"auroc_" + factor, io::format_number(probe.mean), io::format_number(probe.std), h},
      {"auroc_" + factor + "_permuted", io::format_number(control.mean), io::format_number(control.std), h},
  };
  if (data.factors) {
    const auto info = eval::informativeness(z, data.factors->factors, s.seed());
    for (std::size_t f = 0; f < info.size(); ++f)
      rows.push_back({"informativeness_" + data.factors->factor_names[f], info[f] ? io::format_number(*info[f]) : "undefined", "", h});
  }
  const std::size_t n_rec = std::min<std::size_t>(200, data.samples.dim(0));
  const Tensor x = rows_of(data.samples, 0, n_rec);
  const Tensor xhat = reconstruct(model, sched, x, rng);
  const bool cont = cfg.kind() == DataKind::continuous;
  rows.push_back({cont ? "reconstruction_mse" : "reconstruction_bit_accuracy",
                  io::format_number(eval::reconstruction_error(x, xhat, cont ? eval::ReconMetric::mse : eval::ReconMetric::bit_accuracy, cfg.kind())),
                  "", h});
  io::write_csv(s.path("probe.csv"), {"metric", "value", "std", "config_hash"}, rows);
  for (const auto& r : rows) s.out() << r[0] << " " << r[1] << (r[2].empty() ? "" : " +- " + r[2]) << "\n";
  return kExitOk;
}

inline int cmd_gradcheck(Session& s) {
  double worst = 0.0;
  for (DataKind kind : {DataKind::continuous, DataKind::discrete}) {
    const ObjectiveGradCheck r = check_objective_gradients(kind, s.seed());
    s.out() << to_string(kind) << " max_rel_err " << r.report.max_rel_error << " over " << r.report.checked << " weights"
            << " (worst " << r.report.worst_param << "[" << r.report.worst_index << "])\n";
    worst = std::max(worst, r.report.max_rel_error);
  }
  s.out() << "max_rel_err " << worst << "\n";
  return worst < 1e-4 ? kExitOk : kExitFailure;
}

inline int cmd_flow_heatmap(Session& s, double x0, std::size_t bins, std::size_t trajectories) {
  const io::RunConfig& cfg = s.config();
  if (cfg.kind() != DataKind::continuous) throw ConfigError("flow-heatmap needs schedule.kind=continuous");
  Rng rng = Rng(s.seed()).split(16);
  const FlowHeatmap h = export_flow_heatmap(x0, cfg.schedule(), bins, trajectories, rng);
  std::vector<io::CsvRow> grid;
  for (std::size_t c = 0; c < h.steps.size(); ++c)
    for (std::size_t b = 0; b < h.bins(); ++b)
      grid.push_back({std::to_string(h.steps[c]), io::format_number(h.bin_center(b)), io::format_number(h.log_density[c][b])});
  io::write_csv(s.path("flow_heatmap.csv"), {"t", "mu", "log_density"}, grid);
  std::vector<io::CsvRow> lines;
  for (std::size_t k = 0; k < h.trajectories.size(); ++k)
    for (std::size_t c = 0; c < h.steps.size(); ++c)
      lines.push_back({std::to_string(k), std::to_string(h.steps[c]), io::format_number(h.trajectories[k][c])});
  io::write_csv(s.path("flow_trajectories.csv"), {"trajectory", "t", "mu"}, lines);
  s.out() << "wrote " << s.path("flow_heatmap.csv") << " and " << s.path("flow_trajectories.csv") << "\n";
  return kExitOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Parameter-space representation learning on Bayesian flow networks", "paramrel"};
  app.require_subcommand(1, 1);

  CommonOptions common;
  auto add_common = [&](CLI::App* sub, bool needs_checkpoint) {
    sub->add_option("--seed", common.seed, "master seed (sets train.seed)");
    sub->add_option("--config", common.config_path, "key=value config file");
    sub->add_option("--out", common.out_dir, "output directory")->capture_default_str();
    sub->add_option("--set", common.overrides, "override a config key, key=value (repeatable)");
    if (needs_checkpoint) sub->add_option("--checkpoint", common.checkpoint, "trained checkpoint (.prlc)")->required();
  };

  auto* train = app.add_subcommand("train", "train a model and write metrics, config and checkpoint");
  add_common(train, false);

  std::size_t n_samples = 16;
  auto* sample = app.add_subcommand("sample", "generate samples");
  add_common(sample, true);
  sample->add_option("--n", n_samples, "number of samples")->capture_default_str();

  std::size_t first = 0, count = 16;
  auto* recon = app.add_subcommand("reconstruct", "reverse-sample and reconstruct dataset rows");
  add_common(recon, true);
  recon->add_option("--first", first, "first row")->capture_default_str();
  recon->add_option("--n", count, "number of rows")->capture_default_str();

  std::size_t ia = 0, ib = 1, im = 8;
  std::string imode = "slerp";
  auto* interp = app.add_subcommand("interpolate", "interpolate between two dataset rows");
  add_common(interp, true);
  interp->add_option("--a", ia, "first row")->capture_default_str();
  interp->add_option("--b", ib, "second row")->capture_default_str();
  interp->add_option("--mode", imode, "linear or slerp")->check(CLI::IsMember({"linear", "slerp"}))->capture_default_str();
  interp->add_option("--m", im, "number of interpolants")->capture_default_str();

  std::size_t tindex = 0, tdim = 0, tm = 7;
  double tlo = -3.0, thi = 3.0;
  auto* trav = app.add_subcommand("traverse", "sweep one latent coordinate");
  add_common(trav, true);
  trav->add_option("--index", tindex, "dataset row to encode")->capture_default_str();
  trav->add_option("--dim", tdim, "latent coordinate")->capture_default_str();
  trav->add_option("--min", tlo, "lowest value")->capture_default_str();
  trav->add_option("--max", thi, "highest value")->capture_default_str();
  trav->add_option("--m", tm, "number of values")->capture_default_str();

  auto* probe = app.add_subcommand("probe", "latent-probe AUROC, informativeness and reconstruction metrics");
  add_common(probe, true);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the training objective");
  add_common(grad, false);

  double hx0 = 0.8;
  std::size_t hbins = 200, htraj = 10;
  auto* heat = app.add_subcommand("flow-heatmap", "export the Bayesian flow density of a scalar datum");
  add_common(heat, false);
  heat->add_option("--x0", hx0, "data value")->capture_default_str();
  heat->add_option("--bins", hbins, "mu bins")->capture_default_str();
  heat->add_option("--trajectories", htraj, "simulated update trajectories")->capture_default_str();

  if (argc <= 1) {
    err << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    Session s(common, out, err);
    if (train->parsed()) return cmd_train(s);
    if (sample->parsed()) return cmd_sample(s, n_samples);
    if (recon->parsed()) return cmd_reconstruct(s, first, count);
    if (interp->parsed()) return cmd_interpolate(s, ia, ib, imode, im);
    if (trav->parsed()) return cmd_traverse(s, tindex, tdim, tlo, thi, tm);
    if (probe->parsed()) return cmd_probe(s);
    if (grad->parsed()) return cmd_gradcheck(s);
    if (heat->parsed()) return cmd_flow_heatmap(s, hx0, hbins, htraj);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace paramrel::cli
