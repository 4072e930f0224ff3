#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bsdiff/bsde.hpp"
#include "bsdiff/parallel.hpp"

namespace bsdiff {

/// How the Wiener ensemble behind an inversion is drawn.
struct EnsembleConfig {
  Index paths = 8192;
  std::uint64_t seed = 0;
  BasisConfig basis{};
  unsigned workers = 1;
};

/// Latent encoding of xi: the regression solve with Y_T = xi. There is no start
/// time to choose; the BSDE runs over the whole grid.
template <DifferentiableScoreModel Score>
BsdeSolution invert(const Vector& xi, const Score& score, const GeneratorFn& gen, const TimeGrid& grid,
                    const EnsembleConfig& ens_cfg) {
  const WienerEnsemble ens = sample_wiener_ensemble(grid, ens_cfg.paths, xi.size(), ens_cfg.seed, ens_cfg.workers);
  return solve_regression_mc(score, gen, TerminalCondition::constant(xi), grid, ens, ens_cfg.basis);
}

struct ControlParams {
  double lambda_y = 0.0;
  double lambda_z = 1.0;
  Index samples = 256;
  std::uint64_t seed = 0;
  /// Replace the fresh Wiener increments by zeros (drift-only replay).
  bool zero_noise = false;
  unsigned workers = 1;

  void validate() const {
    detail::require(lambda_y >= 0.0 && std::isfinite(lambda_y), "lambda_y must be nonnegative");
    detail::require(lambda_z >= 0.0 && std::isfinite(lambda_z), "lambda_z must be nonnegative");
    detail::require(samples >= 1, "control needs at least one sample");
  }
};

/// The fresh paths a control run replays over; a function of (grid, seed, R) only.
inline WienerEnsemble control_noise(const BsdeSolution& sol, const ControlParams& params) {
  params.validate();
  if (params.zero_noise) return WienerEnsemble::zeros(sol.grid, params.samples, sol.dim());
  return sample_wiener_ensemble(sol.grid, params.samples, sol.dim(), rng::derive_key(params.seed, rng::Tag::Control),
                                params.workers);
}

inline constexpr Index kReplayChunk = 512;

/// Replay in fixed-size path chunks so the arithmetic per path never depends on
/// the worker count.
inline Matrix replay_terminals(const BsdeSolution& sol, const WienerEnsemble& wiener, const Matrix& start,
                               double lambda_z, unsigned workers) {
  const Index paths = wiener.paths();
  const Index chunks = (paths + kReplayChunk - 1) / kReplayChunk;
  Matrix out(sol.dim(), paths);
  parallel_for(static_cast<std::size_t>(chunks), workers, [&](std::size_t c) {
    const Index first = static_cast<Index>(c) * kReplayChunk;
    const Index count = std::min(kReplayChunk, paths - first);
    ReplayOptions opts;
    opts.lambda_z = lambda_z;
    opts.start = start.middleCols(first, count);
    out.middleCols(first, count) = forward_replay(sol, wiener.slice(first, count), opts).terminal();
  });
  return out;
}

/// Y0 + lambda_Y eps_r replayed with Z scaled by lambda_Z over fresh paths; R x d terminals.
inline Matrix joint_control(const BsdeSolution& sol, const ControlParams& params) {
  params.validate();
  const WienerEnsemble wiener = control_noise(sol, params);
  auto eps = rng::Stream::keyed(params.seed, rng::Tag::Prior);
  const Matrix start = sol.y0.replicate(1, params.samples) + params.lambda_y * eps.normal_matrix(sol.dim(), params.samples);
  return replay_terminals(sol, wiener, start, params.lambda_z, params.workers).transpose();
}

/// Terminals of the unmodified solution over the same fresh paths.
inline Matrix plain_replay(const BsdeSolution& sol, const ControlParams& params) {
  const WienerEnsemble wiener = control_noise(sol, params);
  return replay_terminals(sol, wiener, sol.y0.replicate(1, params.samples), 1.0, params.workers).transpose();
}

inline Matrix neighborhood_sample(const BsdeSolution& sol, ControlParams params) {
  params.lambda_z = 1.0;
  return joint_control(sol, params);
}

inline Matrix girsanov_sample(const BsdeSolution& sol, ControlParams params) {
  params.lambda_y = 0.0;
  return joint_control(sol, params);
}

/// Per-coordinate sample standard deviation of the rows of an R x d block.
inline Vector column_std(const Matrix& rows) {
  const Index r = rows.rows();
  if (r < 2) return Vector::Zero(rows.cols());
  const Vector mean = rows.colwise().mean().transpose();
  return ((rows.rowwise() - mean.transpose()).colwise().squaredNorm() / static_cast<double>(r - 1))
      .transpose()
      .array()
      .sqrt()
      .matrix();
}

struct UqConfig {
  Index repetitions = 16;
  Index paths = 4096;
  std::uint64_t seed = 0;
  BasisConfig basis{};
  unsigned workers = 1;

  void validate() const {
    detail::require(repetitions >= 2, "uncertainty quantification needs at least two repetitions");
    detail::require(paths >= 1, "uq ensembles need paths");
  }
};

struct UqReport {
  Index repetitions = 0;
  std::vector<std::uint64_t> seeds;
  /// R x d: Y0 and mean replayed terminal state of each repetition.
  Matrix y0;
  Matrix terminal;
  Vector y0_mean, y0_std;
  Vector terminal_mean, terminal_std;
  bool valid = true;
  std::string message;
};

inline std::uint64_t uq_repetition_seed(std::uint64_t seed, Index r) {
  return rng::derive_key(seed, rng::Tag::Ensemble, static_cast<std::uint64_t>(r));
}

/// Independent re-solves over fresh ensembles; the spread of Y0 across them is
/// the reported uncertainty.
template <DifferentiableScoreModel Score>
UqReport quantify_uncertainty(const TerminalCondition& terminal, const Score& score, const GeneratorFn& gen,
                              const TimeGrid& grid, const UqConfig& cfg) {
  cfg.validate();
  const Index d = terminal.dim();
  const Index reps = cfg.repetitions;
  UqReport report;
  report.repetitions = reps;
  report.y0 = Matrix::Constant(reps, d, std::numeric_limits<double>::quiet_NaN());
  report.terminal = report.y0;
  std::vector<std::string> failures(static_cast<std::size_t>(reps));
  for (Index r = 0; r < reps; ++r) report.seeds.push_back(uq_repetition_seed(cfg.seed, r));
  parallel_for(static_cast<std::size_t>(reps), cfg.workers, [&](std::size_t rr) {
    const Index r = static_cast<Index>(rr);
    try {
      const WienerEnsemble ens = sample_wiener_ensemble(grid, cfg.paths, d, report.seeds[rr]);
      const BsdeSolution sol = solve_regression_mc(score, gen, terminal, grid, ens, cfg.basis);
      report.y0.row(r) = sol.y0.transpose();
      report.terminal.row(r) = replay_terminals(sol, ens, sol.y0.replicate(1, cfg.paths), 1.0, 1).rowwise().mean().transpose();
    } catch (const std::exception& e) {
      failures[rr] = e.what();
    }
  });
  for (Index r = 0; r < reps; ++r) {
    if (!failures[static_cast<std::size_t>(r)].empty()) {
      report.valid = false;
      report.message = "repetition " + std::to_string(r) + ": " + failures[static_cast<std::size_t>(r)];
      break;
    }
  }
  report.y0_mean = report.y0.colwise().mean().transpose();
  report.terminal_mean = report.terminal.colwise().mean().transpose();
  report.y0_std = column_std(report.y0);
  report.terminal_std = column_std(report.terminal);
  return report;
}

template <DifferentiableScoreModel Score>
UqReport quantify_uncertainty(const Vector& xi, const Score& score, const GeneratorFn& gen, const TimeGrid& grid,
                              const UqConfig& cfg) {
  return quantify_uncertainty(TerminalCondition::constant(xi), score, gen, grid, cfg);
}

/// Flat key=value record.
inline void write_uq_report(const UqReport& report, std::ostream& os) {
  os << "repetitions=" << report.repetitions << '\n';
  os << "valid=" << (report.valid ? 1 : 0) << '\n';
  if (!report.message.empty()) os << "message=" << report.message << '\n';
  for (Index j = 0; j < report.y0_mean.size(); ++j) {
    os << "y0_mean_" << (j + 1) << '=' << io::format_double(report.y0_mean(j)) << '\n';
    os << "y0_std_" << (j + 1) << '=' << io::format_double(report.y0_std(j)) << '\n';
    os << "terminal_mean_" << (j + 1) << '=' << io::format_double(report.terminal_mean(j)) << '\n';
    os << "terminal_std_" << (j + 1) << '=' << io::format_double(report.terminal_std(j)) << '\n';
  }
}

/// CSV repetition,seed,y0_1..,terminal_1..
inline void write_uq_csv(const UqReport& report, std::ostream& os) {
  const Index d = report.y0.cols();
  os << "repetition,seed";
  for (Index j = 0; j < d; ++j) os << ",y0_" << (j + 1);
  for (Index j = 0; j < d; ++j) os << ",terminal_" << (j + 1);
  os << '\n';
  for (Index r = 0; r < report.repetitions; ++r) {
    os << r << ',' << report.seeds[static_cast<std::size_t>(r)];
    for (Index j = 0; j < d; ++j) os << ',' << io::format_double(report.y0(r, j));
    for (Index j = 0; j < d; ++j) os << ',' << io::format_double(report.terminal(r, j));
    os << '\n';
  }
}

}  // namespace bsdiff
