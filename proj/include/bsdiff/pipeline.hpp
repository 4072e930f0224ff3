#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bsdiff/analytic.hpp"
#include "bsdiff/bsde.hpp"
#include "bsdiff/config.hpp"
#include "bsdiff/generation.hpp"
#include "bsdiff/score_model.hpp"
#include "bsdiff/svg.hpp"

namespace bsdiff {

inline constexpr const char* kVersion = "0.1.0";

/// Where the score model comes from: a checkpoint, or training on an analytic target.
struct ModelConfig {
  SdeSpec sde = SdeSpec::variance_exploding();
  AnalyticDistribution target = AnalyticDistribution::gaussian(Vector::Constant(1, 1.0), 4.0);
  ScoreNetworkConfig network = default_network();
  TrainConfig train = default_training();
  std::string checkpoint;

  static ScoreNetworkConfig default_network() {
    ScoreNetworkConfig n;
    n.spectral_norm = false;
    n.embed_scale = 0.3;
    return n;
  }
  static TrainConfig default_training() {
    TrainConfig t;
    t.steps = 2000;
    t.batch_size = 1024;
    t.learning_rate = 3e-3;
    t.final_learning_rate = 1e-5;
    t.ema_decay = 0.999;
    return t;
  }
};

struct GeneratorSpec {
  /// g2 (a = g(t)^2), linear (constant a), constant (kappa only), null.
  std::string kind = "g2";
  double a = 0.0;
  double b = 0.0;
  double kappa = 0.0;

  GeneratorFn make(const SdeSpec& sde) const {
    GeneratorFn g;
    if (kind == "g2") g = GeneratorFn::diffusion_squared(sde, b);
    else if (kind == "linear") g = GeneratorFn::linear(a, b);
    else if (kind == "constant") g = GeneratorFn::constant(kappa);
    else if (kind == "null") g = GeneratorFn::null();
    else throw InvalidArgument("unknown generator kind: " + kind);
    if (kind != "constant") g.offset = kappa;
    return g;
  }
};

enum class PipelineTask { Inversion, Control, Uq };

struct PipelineConfig {
  ModelConfig model;
  GeneratorSpec generator;
  Vector target_point = Vector::Constant(1, 3.0);
  Index steps = 64;
  Index paths = 8192;
  BasisConfig basis;
  std::vector<double> lambda_y{0.0, 0.5};
  std::vector<double> lambda_z{1.0, 2.0};
  Index samples = 256;
  Index repetitions = 16;
  Index uq_paths = 4096;
  /// constant (Y_T = target_point) or brownian (Y_T = w_T).
  std::string uq_terminal = "constant";
  double roundtrip_tolerance = 0.05;
  double certainty_tolerance = 1e-4;
  std::uint64_t seed = 0;
  unsigned workers = 1;

  void validate() const {
    detail::require(steps >= 1 && paths >= 1 && samples >= 1 && uq_paths >= 1, "steps, paths and samples must be positive");
    detail::require(repetitions >= 2, "repetitions must be at least 2");
    detail::require(!lambda_y.empty() && !lambda_z.empty(), "lambda lists must not be empty");
    for (double l : lambda_y) detail::require(std::isfinite(l) && l >= 0.0, "lambda_y must be non-negative");
    for (double l : lambda_z) detail::require(std::isfinite(l) && l >= 0.0, "lambda_z must be non-negative");
    detail::require(uq_terminal == "constant" || uq_terminal == "brownian", "uq_terminal must be constant or brownian");
    detail::require(roundtrip_tolerance > 0.0 && certainty_tolerance > 0.0, "tolerances must be positive");
    detail::require(target_point.size() >= 1 && target_point.allFinite(), "xi must be finite");
  }
};

struct PipelineResult {
  bool passed = true;
  /// key=value lines, printed and written as a summary.
  std::vector<std::string> summary;
  std::vector<std::string> files;

  void note(const std::string& key, const std::string& value) { summary.push_back(key + "=" + value); }
  void note(const std::string& key, double value) { note(key, io::format_double(value)); }
  void check(const std::string& name, bool ok) {
    note("check_" + name, ok ? "pass" : "fail");
    passed = passed && ok;
  }
};

inline Vector vector_from(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

/// Model keys shared by every subcommand that needs a score network.
inline ModelConfig model_config_from(const FlatConfig& c) {
  ModelConfig m;
  m.sde = SdeSpec::variance_exploding(c.get_double("sigma_min", 0.01), c.get_double("sigma_max", 5.0), 1.0);
  const std::string target = c.get_string("target", "gaussian");
  const std::vector<double> mean = c.get_doubles("target_mean", {1.0});
  const double variance = c.get_double("target_variance", 4.0);
  const double separation = c.get_double("target_separation", 4.0);
  if (target == "gaussian") {
    m.target = AnalyticDistribution::gaussian(vector_from(mean), variance);
  } else if (target == "mixture") {
    m.target = AnalyticDistribution::symmetric_pair(static_cast<Index>(mean.size()), separation * std::sqrt(variance),
                                                    variance);
  } else {
    throw InvalidArgument("unknown target: " + target);
  }
  m.target.validate();
  m.checkpoint = c.get_string("checkpoint", "");
  ScoreNetworkConfig& n = m.network;
  n.dim = m.target.dim();
  n.width = c.get_int("width", n.width);
  n.hidden_layers = c.get_int("hidden_layers", n.hidden_layers);
  n.spectral_norm = c.get_bool("spectral_norm", n.spectral_norm);
  n.embed_scale = c.get_double("embed_scale", n.embed_scale);
  n.t_min = c.get_double("t_min", n.t_min);
  TrainConfig& t = m.train;
  t.t_min = n.t_min;
  t.steps = c.get_int("train_steps", t.steps);
  t.batch_size = c.get_int("batch_size", t.batch_size);
  t.learning_rate = c.get_double("learning_rate", t.learning_rate);
  t.final_learning_rate = c.get_double("final_learning_rate", t.final_learning_rate);
  t.ema_decay = c.get_double("ema_decay", t.ema_decay);
  t.antithetic = c.get_bool("antithetic", t.antithetic);
  t.stratified_time = c.get_bool("stratified_time", t.stratified_time);
  const std::string weighting = c.get_string("loss_weighting", "literal");
  if (weighting == "literal") t.weighting = LossWeighting::Literal;
  else if (weighting == "kernel_variance") t.weighting = LossWeighting::KernelVariance;
  else if (weighting == "kernel_std") t.weighting = LossWeighting::KernelStd;
  else throw InvalidArgument("unknown loss_weighting: " + weighting);
  return m;
}

inline GeneratorSpec generator_spec_from(const FlatConfig& c) {
  GeneratorSpec g;
  g.kind = c.get_string("generator", g.kind);
  g.a = c.get_double("generator_a", g.a);
  g.b = c.get_double("generator_b", g.b);
  g.kappa = c.get_double("generator_kappa", g.kappa);
  return g;
}

inline PipelineConfig pipeline_config_from(const FlatConfig& c) {
  PipelineConfig p;
  p.model = model_config_from(c);
  p.generator = generator_spec_from(c);
  p.target_point = vector_from(c.get_doubles("xi", {3.0}));
  p.steps = c.get_int("steps", p.steps);
  p.paths = c.get_int("paths", p.paths);
  p.basis.degree = c.get_int("degree", p.basis.degree);
  p.basis.ridge = c.get_double("ridge", p.basis.ridge);
  p.lambda_y = c.get_doubles("lambda_y", p.lambda_y);
  p.lambda_z = c.get_doubles("lambda_z", p.lambda_z);
  p.samples = c.get_int("samples", p.samples);
  p.repetitions = c.get_int("repetitions", p.repetitions);
  p.uq_paths = c.get_int("uq_paths", p.uq_paths);
  p.uq_terminal = c.get_string("uq_terminal", p.uq_terminal);
  p.roundtrip_tolerance = c.get_double("roundtrip_tolerance", p.roundtrip_tolerance);
  p.certainty_tolerance = c.get_double("certainty_tolerance", p.certainty_tolerance);
  return p;
}

/// Loads the checkpoint if one is named, otherwise trains a fresh network with `seed`.
inline ScoreNetwork obtain_model(const ModelConfig& cfg, std::uint64_t seed, TrainingReport* report = nullptr) {
  if (!cfg.checkpoint.empty()) {
    ScoreNetwork net = load_checkpoint(cfg.checkpoint);
    detail::require(net.dim() == cfg.target.dim(), "checkpoint dimension does not match the target");
    return net;
  }
  ScoreNetworkConfig nc = cfg.network;
  nc.seed = seed;
  ScoreNetwork net(nc, cfg.sde);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  TrainingReport rep = train_score(net, cfg.target, cfg.sde, tc);
  if (rep.diverged) throw TrainingDivergence("score training diverged: " + rep.message);
  if (report) *report = std::move(rep);
  return net;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  auto os = io::open_output(path.string());
  os << text;
}

/// Provenance record: tool version, command, config hash, seed, libraries.
inline void write_run_meta(const std::filesystem::path& dir, const std::string& command, const FlatConfig& cfg,
                           std::uint64_t seed, unsigned workers) {
  std::string meta;
  meta += "tool=bsdiff\n";
  meta += std::string("version=") + kVersion + "\n";
  meta += "command=" + command + "\n";
  meta += "config_hash=" + io::hex64(cfg.hash()) + "\n";
  meta += "seed=" + std::to_string(seed) + "\n";
  meta += "workers=" + std::to_string(workers) + "\n";
  meta += "eigen=" + std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
          std::to_string(EIGEN_MINOR_VERSION) + "\n";
#if defined(__VERSION__)
  meta += std::string("compiler=") + __VERSION__ + "\n";
#endif
  for (const auto& [k, v] : cfg.values()) meta += "config." + k + "=" + v + "\n";
  write_text(dir / "run.meta", meta);
}

namespace detail {

inline std::string lambda_tag(double ly, double lz) {
  return "ly" + io::format_double(ly) + "_lz" + io::format_double(lz);
}

template <class Score>
PipelineResult inversion_demo(const Score& score, const PipelineConfig& cfg, const std::filesystem::path& out) {
  PipelineResult res;
  const SdeSpec& sde = cfg.model.sde;
  const GeneratorFn gen = cfg.generator.make(sde);
  const TimeGrid grid(sde.horizon, cfg.steps);
  const Vector& xi = cfg.target_point;
  const WienerEnsemble ens = sample_wiener_ensemble(grid, cfg.paths, xi.size(),
                                                    rng::derive_key(cfg.seed, rng::Tag::Ensemble, 0), cfg.workers);
  const BsdeSolution sol = solve_regression_mc(score, gen, TerminalCondition::constant(xi), grid, ens, cfg.basis);
  const Matrix terminal = replay_terminals(sol, ens, sol.y0.replicate(1, cfg.paths), 1.0, cfg.workers);
  const Vector mean = terminal.rowwise().mean();
  const double rel = (mean - xi).norm() / std::max(xi.norm(), 1e-12);
  for (Index j = 0; j < xi.size(); ++j) {
    res.note("y0_" + std::to_string(j + 1), sol.y0(j));
    res.note("roundtrip_mean_" + std::to_string(j + 1), mean(j));
  }
  res.note("roundtrip_relative_error", rel);
  res.check("roundtrip", rel <= cfg.roundtrip_tolerance);

  {
    auto os = io::open_output((out / "solution.csv").string());
    write_solution_csv(sol, os);
    res.files.push_back("solution.csv");
  }
  {
    auto os = io::open_output((out / "solution_summary.txt").string());
    write_solution_summary(sol, os);
    res.files.push_back("solution_summary.txt");
  }
  const Index shown = std::min<Index>(32, cfg.paths);
  const PathSet paths = forward_replay(sol, ens.slice(0, shown));
  {
    auto os = io::open_output((out / "replay_paths.csv").string());
    write_paths_csv(paths, os);
    res.files.push_back("replay_paths.csv");
  }
  SvgPlot plot("Replayed Y paths from the inverted Y0", "t", "Y_t (coordinate 1)");
  for (Index m = 0; m < shown; ++m) {
    std::vector<double> ys;
    for (const Matrix& s : paths.states) ys.push_back(s(0, m));
    plot.line(paths.times, ys, palette(static_cast<std::size_t>(m)));
  }
  plot.hline(xi(0), "#000");
  write_text(out / "inversion.svg", plot.render());
  res.files.push_back("inversion.svg");
  return res;
}

template <class Score>
PipelineResult control_demo(const Score& score, const PipelineConfig& cfg, const std::filesystem::path& out) {
  PipelineResult res;
  const SdeSpec& sde = cfg.model.sde;
  const GeneratorFn gen = cfg.generator.make(sde);
  const TimeGrid grid(sde.horizon, cfg.steps);
  const Vector& xi = cfg.target_point;
  const Index d = xi.size();
  const WienerEnsemble ens = sample_wiener_ensemble(grid, cfg.paths, d, rng::derive_key(cfg.seed, rng::Tag::Ensemble, 0),
                                                    cfg.workers);
  const BsdeSolution sol = solve_regression_mc(score, gen, TerminalCondition::constant(xi), grid, ens, cfg.basis);

  const std::size_t ny = cfg.lambda_y.size();
  const std::size_t nz = cfg.lambda_z.size();
  std::vector<std::vector<Vector>> dispersion(ny, std::vector<Vector>(nz));
  std::string table = "lambda_y,lambda_z";
  for (Index j = 0; j < d; ++j) table += ",mean_" + std::to_string(j + 1);
  for (Index j = 0; j < d; ++j) table += ",std_" + std::to_string(j + 1);
  table += "\n";
  SvgPlot plot("Terminal states per control setting", "setting", "terminal value (coordinate 1)");
  std::size_t setting = 0;
  for (std::size_t iy = 0; iy < ny; ++iy) {
    for (std::size_t iz = 0; iz < nz; ++iz, ++setting) {
      ControlParams p;
      p.lambda_y = cfg.lambda_y[iy];
      p.lambda_z = cfg.lambda_z[iz];
      p.samples = cfg.samples;
      p.seed = rng::derive_key(cfg.seed, rng::Tag::Control, 1);
      p.workers = cfg.workers;
      const Matrix terminals = joint_control(sol, p);
      const Vector mean = terminals.colwise().mean().transpose();
      const Vector sd = column_std(terminals);
      dispersion[iy][iz] = sd;
      table += io::format_double(p.lambda_y) + "," + io::format_double(p.lambda_z);
      for (Index j = 0; j < d; ++j) table += "," + io::format_double(mean(j));
      for (Index j = 0; j < d; ++j) table += "," + io::format_double(sd(j));
      table += "\n";

      const std::string name = "terminals_" + lambda_tag(p.lambda_y, p.lambda_z) + ".csv";
      auto os = io::open_output((out / name).string());
      os << "sample_id,lambda_y,lambda_z";
      for (Index j = 0; j < d; ++j) os << ",y_" << (j + 1);
      os << '\n';
      std::vector<double> xs, ys;
      for (Index r = 0; r < terminals.rows(); ++r) {
        os << r << ',' << io::format_double(p.lambda_y) << ',' << io::format_double(p.lambda_z);
        for (Index j = 0; j < d; ++j) os << ',' << io::format_double(terminals(r, j));
        os << '\n';
        xs.push_back(static_cast<double>(setting) + 0.6 * (static_cast<double>(r) / terminals.rows() - 0.5));
        ys.push_back(terminals(r, 0));
      }
      res.files.push_back(name);
      plot.points(xs, ys, palette(setting), lambda_tag(p.lambda_y, p.lambda_z));
    }
  }
  write_text(out / "dispersion.csv", table);
  res.files.push_back("dispersion.csv");
  write_text(out / "control.svg", plot.render());
  res.files.push_back("control.svg");

  // Non-decreasing along each axis, in the order the lambdas were given (sorted ascending).
  bool mono_y = std::is_sorted(cfg.lambda_y.begin(), cfg.lambda_y.end());
  bool mono_z = std::is_sorted(cfg.lambda_z.begin(), cfg.lambda_z.end());
  // Drops below kDispersionSlack are rounding noise (a constant terminal has sd ~ 1e-10).
  constexpr double kDispersionSlack = 1e-9;
  auto drops = [&](double next, double prev) { return next < prev - kDispersionSlack * std::max(1.0, prev); };
  for (std::size_t iy = 0; iy < ny; ++iy)
    for (std::size_t iz = 0; iz < nz; ++iz)
      for (Index j = 0; j < d; ++j) {
        if (iy + 1 < ny && drops(dispersion[iy + 1][iz](j), dispersion[iy][iz](j))) mono_y = false;
        if (iz + 1 < nz && drops(dispersion[iy][iz + 1](j), dispersion[iy][iz](j))) mono_z = false;
      }
  res.note("y0_1", sol.y0(0));
  res.check("dispersion_monotone_lambda_y", mono_y);
  res.check("dispersion_monotone_lambda_z", mono_z);
  return res;
}

template <class Score>
PipelineResult uq_demo(const Score& score, const PipelineConfig& cfg, const std::filesystem::path& out) {
  PipelineResult res;
  const SdeSpec& sde = cfg.model.sde;
  const GeneratorFn gen = cfg.generator.make(sde);
  const TimeGrid grid(sde.horizon, cfg.steps);
  const Index d = cfg.target_point.size();
  TerminalCondition terminal;
  if (cfg.uq_terminal == "constant") terminal = TerminalCondition::constant(cfg.target_point);
  else if (cfg.uq_terminal == "brownian") terminal = TerminalCondition::brownian(d);
  else throw InvalidArgument("unknown uq_terminal: " + cfg.uq_terminal);
  UqConfig uc;
  uc.repetitions = cfg.repetitions;
  uc.paths = cfg.uq_paths;
  uc.seed = cfg.seed;
  uc.basis = cfg.basis;
  uc.workers = cfg.workers;
  const UqReport report = quantify_uncertainty(terminal, score, gen, grid, uc);
  {
    auto os = io::open_output((out / "uq_report.txt").string());
    write_uq_report(report, os);
    res.files.push_back("uq_report.txt");
  }
  {
    auto os = io::open_output((out / "uq_repetitions.csv").string());
    write_uq_csv(report, os);
    res.files.push_back("uq_repetitions.csv");
  }
  SvgPlot plot("Y0 across independent ensembles", "repetition", "Y0 (coordinate 1)");
  std::vector<double> xs, ys;
  for (Index r = 0; r < report.repetitions; ++r) {
    xs.push_back(static_cast<double>(r));
    ys.push_back(report.y0(r, 0));
  }
  plot.points(xs, ys, palette(0), "Y0");
  plot.hline(report.y0_mean(0), "#000");
  plot.hline(report.y0_mean(0) + report.y0_std(0), "#888");
  plot.hline(report.y0_mean(0) - report.y0_std(0), "#888");
  write_text(out / "uq.svg", plot.render());
  res.files.push_back("uq.svg");

  res.check("repetitions_valid", report.valid);
  bool finite = report.y0_std.allFinite() && (report.y0_std.array() >= 0.0).all();
  res.check("std_finite", finite);
  for (Index j = 0; j < d; ++j) res.note("y0_std_" + std::to_string(j + 1), report.y0_std(j));
  if (!gen.uses_score() && gen.offset == 0.0 && gen.b == 0.0 && terminal.is_constant()) {
    res.check("degenerate_certainty", report.y0_std.maxCoeff() <= cfg.certainty_tolerance);
  }
  return res;
}

}  // namespace detail

/// Runs one end-to-end application on the configured toy model and writes its
/// CSV/SVG artifacts into `out`. `passed` reflects the task's built-in checks.
inline PipelineResult run_pipeline_demo(PipelineTask task, const PipelineConfig& cfg, const std::filesystem::path& out) {
  cfg.validate();
  std::filesystem::create_directories(out);
  detail::require(cfg.target_point.size() == cfg.model.target.dim(), "xi dimension does not match the target");
  const GeneratorFn gen = cfg.generator.make(cfg.model.sde);
  auto dispatch = [&](const auto& score) {
    switch (task) {
      case PipelineTask::Inversion: return detail::inversion_demo(score, cfg, out);
      case PipelineTask::Control: return detail::control_demo(score, cfg, out);
      case PipelineTask::Uq: return detail::uq_demo(score, cfg, out);
    }
    throw InvalidArgument("unknown pipeline task");
  };
  if (!gen.uses_score()) return dispatch(ZeroScore(cfg.target_point.size()));
  TrainingReport rep;
  const ScoreNetwork net = obtain_model(cfg.model, cfg.seed, &rep);
  PipelineResult res = dispatch(net);
  if (cfg.model.checkpoint.empty()) res.note("model_validation_max_error", rep.final_validation_max_error);
  return res;
}

}  // namespace bsdiff
