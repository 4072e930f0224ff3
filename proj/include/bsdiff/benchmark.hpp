#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "bsdiff/analytic.hpp"
#include "bsdiff/io.hpp"
#include "bsdiff/parallel.hpp"
#include "bsdiff/score_model.hpp"
#include "bsdiff/stats.hpp"

namespace bsdiff {

/// Spectral normalization on vs off, trained with identical seeds and budgets.
struct BenchmarkConfig {
  Index seeds = 10;
  std::uint64_t seed = 0;
  /// Normalization flag of each arm; setting both equal gives the null comparison.
  bool arm_a_spectral = true;
  bool arm_b_spectral = false;
  double separation = 4.0;
  double component_variance = 1.0;
  Index width = 64;
  Index hidden_layers = 3;
  double embed_scale = 0.3;
  TrainConfig train = default_train();
  unsigned workers = 1;

  static TrainConfig default_train() {
    TrainConfig t;
    t.steps = 2000;
    t.batch_size = 512;
    t.learning_rate = 3e-3;
    t.final_learning_rate = 1e-5;
    t.ema_decay = 0.999;
    return t;
  }

  void validate() const {
    detail::require(seeds >= 1, "benchmark needs at least one seed");
    detail::require(separation > 0.0 && component_variance > 0.0, "mixture parameters must be positive");
  }
};

struct BenchmarkRun {
  int arm = 0;
  bool spectral_norm = false;
  std::uint64_t seed = 0;
  double validation_mse = 0.0;
  double max_error = 0.0;
  double lipschitz_bound = 0.0;
  double final_loss = 0.0;
  bool diverged = false;
  std::uint64_t stream_fingerprint = 0;
  double wall_seconds = 0.0;
};

struct ArmSummary {
  std::size_t runs = 0;
  std::size_t diverged = 0;
  double mean_mse = 0.0;
  double std_mse = 0.0;
};

struct BenchmarkTable {
  std::vector<BenchmarkRun> runs;
  ArmSummary arm_a, arm_b;
  StatsResult test;
  /// Both arms of every seed consumed the same draws.
  bool streams_match = true;
  /// Observation only: arm A's mean MSE is below arm B's.
  bool arm_a_lower_mse = false;
  double wall_seconds = 0.0;
};

inline AnalyticDistribution benchmark_target(const BenchmarkConfig& cfg) {
  return AnalyticDistribution::symmetric_pair(1, cfg.separation * std::sqrt(cfg.component_variance),
                                              cfg.component_variance);
}

inline ArmSummary summarize_arm(const std::vector<double>& mse, std::size_t diverged) {
  ArmSummary s;
  s.runs = mse.size();
  s.diverged = diverged;
  if (mse.empty()) return s;
  double sum = 0.0;
  for (double v : mse) sum += v;
  s.mean_mse = sum / static_cast<double>(mse.size());
  if (mse.size() > 1) {
    double ss = 0.0;
    for (double v : mse) ss += (v - s.mean_mse) * (v - s.mean_mse);
    s.std_mse = std::sqrt(ss / static_cast<double>(mse.size() - 1));
  }
  return s;
}

inline BenchmarkTable run_lipschitz_benchmark(const BenchmarkConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const SdeSpec sde = SdeSpec::variance_exploding();
  const AnalyticDistribution target = benchmark_target(cfg);
  const auto jobs = static_cast<std::size_t>(2 * cfg.seeds);
  BenchmarkTable table;
  table.runs.resize(jobs);
  parallel_for(jobs, cfg.workers, [&](std::size_t job) {
    BenchmarkRun& run = table.runs[job];
    run.arm = static_cast<int>(job % 2);
    run.spectral_norm = run.arm == 0 ? cfg.arm_a_spectral : cfg.arm_b_spectral;
    run.seed = cfg.seed + static_cast<std::uint64_t>(job / 2);
    ScoreNetworkConfig nc;
    nc.dim = 1;
    nc.width = cfg.width;
    nc.hidden_layers = cfg.hidden_layers;
    nc.spectral_norm = run.spectral_norm;
    nc.embed_scale = cfg.embed_scale;
    nc.t_min = cfg.train.t_min;
    nc.seed = run.seed;
    ScoreNetwork net(nc, sde);
    TrainConfig tc = cfg.train;
    tc.seed = run.seed;
    const TrainingReport rep = train_score(net, target, sde, tc);
    run.validation_mse = rep.final_validation_mse;
    run.max_error = rep.final_validation_max_error;
    run.lipschitz_bound = rep.lipschitz_bound;
    run.final_loss = rep.loss_trace.empty() ? 0.0 : rep.loss_trace.back();
    run.diverged = rep.diverged || !std::isfinite(rep.final_validation_mse);
    run.stream_fingerprint = rep.stream_fingerprint;
    run.wall_seconds = rep.wall_seconds;
  });

  std::vector<double> a, b;
  std::size_t div_a = 0, div_b = 0;
  for (std::size_t i = 0; i < jobs; ++i) {
    const BenchmarkRun& run = table.runs[i];
    if (i % 2 == 0 && run.stream_fingerprint != table.runs[i + 1].stream_fingerprint) table.streams_match = false;
    if (run.diverged) {
      (run.arm == 0 ? div_a : div_b) += 1;
      continue;
    }
    (run.arm == 0 ? a : b).push_back(run.validation_mse);
  }
  table.arm_a = summarize_arm(a, div_a);
  table.arm_b = summarize_arm(b, div_b);
  if (!a.empty() && !b.empty()) table.test = mann_whitney_u(a, b);
  table.arm_a_lower_mse = table.arm_a.mean_mse < table.arm_b.mean_mse;
  table.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return table;
}

/// One row per (seed, arm); wall time is left out so the file is reproducible.
inline void write_benchmark_csv(const BenchmarkTable& table, std::ostream& os) {
  os << "seed,arm,spectral_norm,validation_mse,max_error,lipschitz_bound,final_loss,diverged,stream_fingerprint\n";
  for (const BenchmarkRun& r : table.runs) {
    os << r.seed << ',' << (r.arm == 0 ? 'A' : 'B') << ',' << (r.spectral_norm ? 1 : 0) << ','
       << io::format_double(r.validation_mse) << ',' << io::format_double(r.max_error) << ','
       << io::format_double(r.lipschitz_bound) << ',' << io::format_double(r.final_loss) << ','
       << (r.diverged ? 1 : 0) << ',' << io::hex64(r.stream_fingerprint) << '\n';
  }
}

inline void write_benchmark_summary_csv(const BenchmarkTable& table, const BenchmarkConfig& cfg, std::ostream& os) {
  os << "arm,spectral_norm,runs,diverged,mean_mse,std_mse\n";
  auto row = [&](char name, bool sn, const ArmSummary& s) {
    os << name << ',' << (sn ? 1 : 0) << ',' << s.runs << ',' << s.diverged << ',' << io::format_double(s.mean_mse)
       << ',' << io::format_double(s.std_mse) << '\n';
  };
  row('A', cfg.arm_a_spectral, table.arm_a);
  row('B', cfg.arm_b_spectral, table.arm_b);
}

inline void write_benchmark_test(const BenchmarkTable& table, std::ostream& os) {
  os << "u=" << io::format_double(table.test.u) << '\n';
  os << "p_value=" << io::format_double(table.test.p_value) << '\n';
  os << "method="
     << (table.test.method == StatsResult::Method::ExactEnumeration ? "exact" : "normal_approximation") << '\n';
  os << "n=" << table.test.n << "\nm=" << table.test.m << '\n';
  os << "streams_match=" << (table.streams_match ? 1 : 0) << '\n';
  os << "arm_a_lower_mse=" << (table.arm_a_lower_mse ? 1 : 0) << '\n';
}

}  // namespace bsdiff
