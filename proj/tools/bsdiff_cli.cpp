// bsdiff command line: training, sampling, BSDE solves and the application demos.
//
// Every subcommand takes --config (flat key = value file), --seed, --out and
// --workers. Exit codes: 0 success, 2 validation failure, 3 numerical failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bsdiff/bsdiff.hpp"

namespace fs = std::filesystem;
using namespace bsdiff;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct CommonArgs {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";
  unsigned workers = 1;
};

FlatConfig load_config(const CommonArgs& args) {
  if (args.config.empty()) return FlatConfig{};
  return FlatConfig::load(args.config);
}

void print_summary(const std::vector<std::string>& lines, const fs::path& file) {
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  std::cout << text;
  write_text(file, text);
}

int finish(const PipelineResult& res, const fs::path& out, const std::string& name) {
  print_summary(res.summary, out / (name + "_summary.txt"));
  if (!res.passed) {
    std::cerr << name << ": acceptance check failed\n";
    return kExitValidation;
  }
  return kExitOk;
}

int cmd_train(const CommonArgs& args) {
  const FlatConfig cfg = load_config(args);
  ModelConfig model = model_config_from(cfg);
  const Index val_points = cfg.get_int("validation_points", 61);
  cfg.reject_unused();
  detail::require(model.checkpoint.empty(), "train does not take a checkpoint");
  model.train.validation.points = val_points;
  const fs::path out(args.out);
  fs::create_directories(out);

  ScoreNetworkConfig nc = model.network;
  nc.seed = args.seed;
  ScoreNetwork net(nc, model.sde);
  TrainConfig tc = model.train;
  tc.seed = args.seed;
  const TrainingReport rep = train_score(net, model.target, model.sde, tc);
  std::cerr << "train: " << rep.steps_completed << " steps in " << rep.wall_seconds << " s\n";

  {
    auto os = io::open_output((out / "loss.csv").string());
    os << "step,loss\n";
    for (std::size_t i = 0; i < rep.loss_trace.size(); ++i) os << i << ',' << io::format_double(rep.loss_trace[i]) << '\n';
  }
  std::vector<std::string> summary{
      "steps_completed=" + std::to_string(rep.steps_completed),
      "initial_validation_mse=" + io::format_double(rep.initial_validation_mse),
      "final_validation_mse=" + io::format_double(rep.final_validation_mse),
      "final_validation_max_error=" + io::format_double(rep.final_validation_max_error),
      "lipschitz_bound=" + io::format_double(rep.lipschitz_bound),
      "stream_fingerprint=" + io::hex64(rep.stream_fingerprint),
      "diverged=" + std::string(rep.diverged ? "1" : "0"),
  };
  write_run_meta(out, "train", cfg, args.seed, args.workers);
  if (rep.diverged) {
    summary.push_back("message=" + rep.message);
    print_summary(summary, out / "train_summary.txt");
    return kExitNumerical;
  }
  save_checkpoint(net, (out / "checkpoint.bin").string());
  print_summary(summary, out / "train_summary.txt");

  if (net.dim() == 1) {
    const ValidationGrid& g = tc.validation;
    auto os = io::open_output((out / "validation.csv").string());
    os << "t,x,model,analytic\n";
    SvgPlot plot("Learned vs exact perturbed score", "x", "score");
    std::size_t series = 0;
    for (double t : g.times) {
      Matrix x(1, g.points);
      for (Index i = 0; i < g.points; ++i) x(0, i) = g.lo + (g.hi - g.lo) * i / static_cast<double>(g.points - 1);
      const Matrix s = net.score(x, t);
      std::vector<double> xs, model_ys, exact_ys;
      for (Index i = 0; i < g.points; ++i) {
        const double exact = analytic_perturbed_score(model.target, model.sde, x.col(i), t)(0);
        os << io::format_double(t) << ',' << io::format_double(x(0, i)) << ',' << io::format_double(s(0, i)) << ','
           << io::format_double(exact) << '\n';
        xs.push_back(x(0, i));
        model_ys.push_back(s(0, i));
        exact_ys.push_back(exact);
      }
      plot.line(xs, model_ys, palette(series), "model t=" + io::format_double(t));
      plot.points(xs, exact_ys, palette(series));
      ++series;
    }
    write_text(out / "score.svg", plot.render());
  }
  return kExitOk;
}

int cmd_sample(const CommonArgs& args) {
  const FlatConfig cfg = load_config(args);
  const ModelConfig model = model_config_from(cfg);
  const Index samples = cfg.get_int("samples", 1024);
  const Index steps = cfg.get_int("steps", 256);
  cfg.reject_unused();
  detail::require(samples >= 1 && steps >= 1, "samples and steps must be positive");
  const fs::path out(args.out);
  fs::create_directories(out);

  const ScoreNetwork net = obtain_model(model, args.seed);
  const Index d = net.dim();
  const TimeGrid grid(model.sde.horizon, steps);
  const WienerEnsemble wiener =
      sample_wiener_ensemble(grid, samples, d, rng::derive_key(args.seed, rng::Tag::Ensemble, 2), args.workers);
  auto prior = rng::Stream::keyed(args.seed, rng::Tag::Prior, 2);
  const Matrix x_init = prior.normal_matrix(d, samples) * model.sde.kernel_std(model.sde.horizon);
  const double t_stop = net.t_min();

  Matrix terminal(d, samples);
  const Index chunks = (samples + kReplayChunk - 1) / kReplayChunk;
  parallel_for(static_cast<std::size_t>(chunks), args.workers, [&](std::size_t c) {
    const Index first = static_cast<Index>(c) * kReplayChunk;
    const Index count = std::min(kReplayChunk, samples - first);
    terminal.middleCols(first, count) =
        sample_reverse(model.sde, net, x_init.middleCols(first, count), grid, wiener.slice(first, count), t_stop)
            .terminal();
  });

  {
    auto os = io::open_output((out / "samples.csv").string());
    os << "sample_id";
    for (Index j = 0; j < d; ++j) os << ",x_" << (j + 1);
    os << '\n';
    for (Index m = 0; m < samples; ++m) {
      os << m;
      for (Index j = 0; j < d; ++j) os << ',' << io::format_double(terminal(j, m));
      os << '\n';
    }
  }
  const Vector mean = terminal.rowwise().mean();
  const Vector var = (terminal.colwise() - mean).rowwise().squaredNorm() / std::max<double>(1.0, samples - 1.0);
  const Vector target_var = model.target.marginal_variance(model.sde.kernel_variance(t_stop));
  const Vector target_mean = model.target.mean();
  std::vector<std::string> summary;
  for (Index j = 0; j < d; ++j) {
    const std::string k = std::to_string(j + 1);
    summary.push_back("sample_mean_" + k + "=" + io::format_double(mean(j)));
    summary.push_back("sample_variance_" + k + "=" + io::format_double(var(j)));
    summary.push_back("target_mean_" + k + "=" + io::format_double(target_mean(j)));
    summary.push_back("target_variance_" + k + "=" + io::format_double(target_var(j)));
  }
  print_summary(summary, out / "sample_summary.txt");
  write_run_meta(out, "sample", cfg, args.seed, args.workers);

  SvgPlot plot("Reverse-time samples", "sample index", "x (coordinate 1)");
  std::vector<double> xs, ys;
  for (Index m = 0; m < samples; ++m) {
    xs.push_back(static_cast<double>(m));
    ys.push_back(terminal(0, m));
  }
  plot.points(xs, ys, palette(0), "samples");
  plot.hline(target_mean(0), "#000");
  write_text(out / "samples.svg", plot.render());
  return kExitOk;
}

int cmd_pipeline(const CommonArgs& args, PipelineTask task, const std::string& name) {
  const FlatConfig cfg = load_config(args);
  PipelineConfig p = pipeline_config_from(cfg);
  cfg.reject_unused();
  p.seed = args.seed;
  p.workers = args.workers;
  const fs::path out(args.out);
  fs::create_directories(out);
  const PipelineResult res = run_pipeline_demo(task, p, out);
  write_run_meta(out, name, cfg, args.seed, args.workers);
  return finish(res, out, name);
}

int cmd_solve(const CommonArgs& args) {
  const FlatConfig cfg = load_config(args);
  const ModelConfig model = model_config_from(cfg);
  const GeneratorSpec gen_spec = generator_spec_from(cfg);
  const std::string terminal_kind = cfg.get_string("terminal", "constant");
  const Vector terminal_value = vector_from(cfg.get_doubles("terminal_value", {1.0}));
  const std::string solver = cfg.get_string("solver", "regression");
  const Index steps = cfg.get_int("steps", 32);
  const Index paths = cfg.get_int("paths", 4096);
  BasisConfig basis;
  basis.degree = cfg.get_int("degree", basis.degree);
  basis.ridge = cfg.get_double("ridge", basis.ridge);
  ShootingConfig sc;
  sc.iterations = cfg.get_int("shooting_iterations", sc.iterations);
  sc.learning_rate = cfg.get_double("shooting_learning_rate", sc.learning_rate);
  sc.y0_learning_rate = cfg.get_double("shooting_y0_learning_rate", sc.y0_learning_rate);
  sc.width = cfg.get_int("shooting_width", sc.width);
  sc.hidden_layers = cfg.get_int("shooting_hidden_layers", sc.hidden_layers);
  sc.loss_threshold = cfg.get_double("shooting_loss_threshold", sc.loss_threshold);
  const std::string ensemble_in = cfg.get_string("ensemble_in", "");
  const bool dump_ensemble = cfg.get_bool("dump_ensemble", false);
  const Index replay_paths = cfg.get_int("replay_paths", 256);
  cfg.reject_unused();
  detail::require(solver == "regression" || solver == "shooting" || solver == "both",
                  "solver must be regression, shooting or both");
  sc.seed = args.seed;
  const fs::path out(args.out);
  fs::create_directories(out);

  const Index d = terminal_value.size();
  TerminalCondition terminal;
  if (terminal_kind == "constant") terminal = TerminalCondition::constant(terminal_value);
  else if (terminal_kind == "brownian") terminal = TerminalCondition::brownian(d);
  else throw InvalidArgument("terminal must be constant or brownian");
  const GeneratorFn gen = gen_spec.make(model.sde);

  const TimeGrid grid(model.sde.horizon, steps);
  WienerEnsemble ens = ensemble_in.empty()
                           ? sample_wiener_ensemble(grid, paths, d, rng::derive_key(args.seed, rng::Tag::Ensemble, 0),
                                                    args.workers)
                           : load_ensemble(ensemble_in);
  detail::require(ens.grid() == grid && ens.dim() == d, "loaded ensemble does not match steps/dimension");
  if (dump_ensemble) save_ensemble(ens, (out / "ensemble.bin").string());

  auto run = [&](const auto& score) {
    std::vector<std::string> summary;
    int code = kExitOk;
    if (solver != "shooting") {
      const BsdeSolution sol = solve_regression_mc(score, gen, terminal, grid, ens, basis);
      {
        auto os = io::open_output((out / "solution.csv").string());
        write_solution_csv(sol, os);
      }
      {
        auto os = io::open_output((out / "solution_summary.txt").string());
        write_solution_summary(sol, os);
      }
      for (Index j = 0; j < d; ++j) {
        summary.push_back("regression_y0_" + std::to_string(j + 1) + "=" + io::format_double(sol.y0(j)));
        summary.push_back("regression_y0_stderr_" + std::to_string(j + 1) + "=" + io::format_double(sol.y0_stderr(j)));
      }
      summary.push_back("generator_sq_mean=" + io::format_double(sol.diagnostics.generator_sq_mean));
      const WienerEnsemble fresh =
          sample_wiener_ensemble(grid, replay_paths, d, rng::derive_key(args.seed, rng::Tag::Ensemble, 3), args.workers);
      const Matrix yt = replay_terminals(sol, fresh, sol.y0.replicate(1, replay_paths), 1.0, args.workers);
      auto os = io::open_output((out / "replay.csv").string());
      os << "path_id";
      for (Index j = 0; j < d; ++j) os << ",y_T_" << (j + 1);
      for (Index j = 0; j < d; ++j) os << ",w_T_" << (j + 1);
      os << '\n';
      for (Index m = 0; m < replay_paths; ++m) {
        os << m;
        for (Index j = 0; j < d; ++j) os << ',' << io::format_double(yt(j, m));
        for (Index j = 0; j < d; ++j) os << ',' << io::format_double(fresh.position(m, steps)(j));
        os << '\n';
      }
    }
    if (solver != "regression") {
      const BsdeSolution sol = solve_deep_shooting(score, gen, terminal, grid, ens, sc);
      {
        auto os = io::open_output((out / "shooting_summary.txt").string());
        write_solution_summary(sol, os);
      }
      {
        auto os = io::open_output((out / "shooting_loss.csv").string());
        os << "iteration,loss\n";
        const auto& trace = sol.diagnostics.loss_trace;
        for (std::size_t i = 0; i < trace.size(); ++i) os << i << ',' << io::format_double(trace[i]) << '\n';
      }
      for (Index j = 0; j < d; ++j) {
        summary.push_back("shooting_y0_" + std::to_string(j + 1) + "=" + io::format_double(sol.y0(j)));
        summary.push_back("shooting_y0_stderr_" + std::to_string(j + 1) + "=" + io::format_double(sol.y0_stderr(j)));
      }
      summary.push_back("shooting_loss=" + io::format_double(sol.diagnostics.final_loss));
      summary.push_back(std::string("shooting_converged=") + (sol.diagnostics.converged ? "1" : "0"));
      if (!sol.diagnostics.converged) {
        std::cerr << "solve-bsde: shooting loss above threshold\n";
        code = kExitNumerical;
      }
    }
    print_summary(summary, out / "solve_summary.txt");
    return code;
  };
  int code = kExitOk;
  if (gen.uses_score()) {
    const ScoreNetwork net = obtain_model(model, args.seed);
    detail::require(net.dim() == d, "score model dimension does not match the terminal value");
    code = run(net);
  } else {
    code = run(ZeroScore(d));
  }
  write_run_meta(out, "solve-bsde", cfg, args.seed, args.workers);
  return code;
}

int cmd_bench(const CommonArgs& args) {
  const FlatConfig cfg = load_config(args);
  BenchmarkConfig bc;
  bc.seeds = cfg.get_int("seeds", bc.seeds);
  bc.arm_a_spectral = cfg.get_bool("arm_a_spectral", bc.arm_a_spectral);
  bc.arm_b_spectral = cfg.get_bool("arm_b_spectral", bc.arm_b_spectral);
  bc.separation = cfg.get_double("separation", bc.separation);
  bc.component_variance = cfg.get_double("component_variance", bc.component_variance);
  bc.width = cfg.get_int("width", bc.width);
  bc.hidden_layers = cfg.get_int("hidden_layers", bc.hidden_layers);
  bc.embed_scale = cfg.get_double("embed_scale", bc.embed_scale);
  TrainConfig& t = bc.train;
  t.steps = cfg.get_int("train_steps", t.steps);
  t.batch_size = cfg.get_int("batch_size", t.batch_size);
  t.learning_rate = cfg.get_double("learning_rate", t.learning_rate);
  t.final_learning_rate = cfg.get_double("final_learning_rate", t.final_learning_rate);
  t.ema_decay = cfg.get_double("ema_decay", t.ema_decay);
  t.t_min = cfg.get_double("t_min", t.t_min);
  cfg.reject_unused();
  bc.seed = args.seed;
  bc.workers = args.workers;
  const fs::path out(args.out);
  fs::create_directories(out);

  const BenchmarkTable table = run_lipschitz_benchmark(bc);
  std::cerr << "bench-lipschitz: " << table.runs.size() << " runs in " << table.wall_seconds << " s\n";
  {
    auto os = io::open_output((out / "benchmark.csv").string());
    write_benchmark_csv(table, os);
  }
  {
    auto os = io::open_output((out / "benchmark_summary.csv").string());
    write_benchmark_summary_csv(table, bc, os);
  }
  {
    auto os = io::open_output((out / "benchmark_test.txt").string());
    write_benchmark_test(table, os);
  }
  SvgPlot plot("Validation MSE per seed", "seed", "validation MSE");
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<double> xs, ys;
    for (const auto& r : table.runs) {
      if (r.arm != arm || r.diverged) continue;
      xs.push_back(static_cast<double>(r.seed));
      ys.push_back(r.validation_mse);
    }
    const bool sn = arm == 0 ? bc.arm_a_spectral : bc.arm_b_spectral;
    plot.points(xs, ys, palette(static_cast<std::size_t>(arm)), sn ? "spectral norm" : "unconstrained");
    plot.line(xs, ys, palette(static_cast<std::size_t>(arm)));
  }
  write_text(out / "benchmark.svg", plot.render());
  write_run_meta(out, "bench-lipschitz", cfg, args.seed, args.workers);

  bool complete = table.runs.size() == static_cast<std::size_t>(2 * bc.seeds);
  for (const auto& r : table.runs)
    if (!r.diverged && !std::isfinite(r.validation_mse)) complete = false;
  const bool exact_expected = table.test.n * table.test.m <= kExactTestLimit;
  const bool exact_ok = !exact_expected || table.test.method == StatsResult::Method::ExactEnumeration;
  std::vector<std::string> summary{
      "rows=" + std::to_string(table.runs.size()),
      "arm_a_mean_mse=" + io::format_double(table.arm_a.mean_mse),
      "arm_a_std_mse=" + io::format_double(table.arm_a.std_mse),
      "arm_b_mean_mse=" + io::format_double(table.arm_b.mean_mse),
      "arm_b_std_mse=" + io::format_double(table.arm_b.std_mse),
      "u=" + io::format_double(table.test.u),
      "p_value=" + io::format_double(table.test.p_value),
      std::string("arm_a_lower_mse=") + (table.arm_a_lower_mse ? "1" : "0"),
      std::string("streams_match=") + (table.streams_match ? "1" : "0"),
  };
  print_summary(summary, out / "bench_summary.txt");
  if (!complete || !table.streams_match || !exact_ok) {
    std::cerr << "bench-lipschitz: table incomplete or arms consumed different streams\n";
    return kExitValidation;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BSDE-based score diffusion toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  CommonArgs args;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config, "flat key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", args.seed, "master seed");
    sub->add_option("--out", args.out, "output directory")->required();
    sub->add_option("--workers", args.workers, "worker threads")->check(CLI::Range(1u, 256u));
  };
  auto* train = app.add_subcommand("train", "train a score network on an analytic target");
  auto* sample = app.add_subcommand("sample", "reverse-time sampling from a score network");
  auto* invert = app.add_subcommand("invert", "invert a target point and replay it");
  auto* control = app.add_subcommand("control", "Y0-neighborhood and Girsanov-scaled generation");
  auto* uq = app.add_subcommand("uq", "uncertainty of Y0 over independent ensembles");
  auto* bench = app.add_subcommand("bench-lipschitz", "spectral normalization on/off benchmark");
  auto* solve = app.add_subcommand("solve-bsde", "solve a BSDE by regression Monte Carlo or shooting");
  for (auto* s : {train, sample, invert, control, uq, bench, solve}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*train) return cmd_train(args);
    if (*sample) return cmd_sample(args);
    if (*invert) return cmd_pipeline(args, PipelineTask::Inversion, "invert");
    if (*control) return cmd_pipeline(args, PipelineTask::Control, "control");
    if (*uq) return cmd_pipeline(args, PipelineTask::Uq, "uq");
    if (*bench) return cmd_bench(args);
    if (*solve) return cmd_solve(args);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ValidationFailure& e) {
    std::cerr << "validation failed: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}
