#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "bsdiff/analytic.hpp"
#include "bsdiff/io.hpp"
#include "bsdiff/mlp.hpp"
#include "bsdiff/sde.hpp"

namespace bsdiff {

struct ScoreNetworkConfig {
  Index dim = 1;
  Index width = 64;
  Index hidden_layers = 3;
  bool spectral_norm = true;
  double t_min = 0.01;
  /// Frequency of the (sin, cos) embedding of log sigma_t.
  double embed_scale = 0.2;
  std::uint64_t seed = 0;
};

/// Noise-conditioned score model s(x, t): an MLP over [x, sin(w log sigma_t), cos(w log sigma_t)],
/// sigma_t being the perturbation-kernel standard deviation.
class ScoreNetwork {
 public:
  ScoreNetwork(const ScoreNetworkConfig& cfg, const SdeSpec& sde) : cfg_(cfg), sde_(sde) {
    detail::require(cfg.dim >= 1, "score network dimension must be positive");
    detail::require(cfg.width >= 1 && cfg.hidden_layers >= 1, "score network needs hidden layers");
    detail::require(cfg.t_min > 0.0 && cfg.t_min < sde.horizon, "t_min must lie in (0, T)");
    detail::require(sde.kind == SdeSpec::Kind::VarianceExploding, "score networks are conditioned on a VE schedule");
    std::vector<Index> sizes{cfg.dim + 2};
    for (Index l = 0; l < cfg.hidden_layers; ++l) sizes.push_back(cfg.width);
    sizes.push_back(cfg.dim);
    auto init = rng::Stream::keyed(cfg.seed, rng::Tag::Init);
    mlp_ = Mlp(sizes, cfg.spectral_norm, init);
    certify();
  }

  ScoreNetwork(const ScoreNetworkConfig& cfg, const SdeSpec& sde, Mlp mlp) : cfg_(cfg), sde_(sde), mlp_(std::move(mlp)) {}

  Index dim() const { return cfg_.dim; }
  const ScoreNetworkConfig& config() const { return cfg_; }
  const SdeSpec& sde() const { return sde_; }
  double t_min() const { return cfg_.t_min; }
  bool spectral_norm_enabled() const { return mlp_.spectral_norm(); }
  const Mlp& mlp() const { return mlp_; }
  Mlp& mlp() { return mlp_; }

  /// Converged power iteration (>= 20 iterations) on every layer.
  void certify() {
    for (auto& layer : mlp_.layers()) {
      SpectralEstimate est = power_spectral_norm(layer.weight, 20, layer.u);
      for (int it = 20; it < 2000 && est.sigma > 0.0; ++it) {
        SpectralEstimate next = power_spectral_norm(layer.weight, 1, est.u);
        const bool done = std::abs(next.sigma - est.sigma) <= 1e-13 * next.sigma;
        est = std::move(next);
        if (done) break;
      }
      if (est.sigma > 0.0) {
        layer.u = std::move(est.u);
        layer.v = std::move(est.v);
      }
      layer.sigma = est.sigma;
    }
  }

  void check_time(double t) const {
    if (!(t > 0.0 && t <= sde_.horizon)) throw InvalidArgument("score time outside (0, T]: " + io::format_double(t));
  }

  Vector embedding(double t) const {
    const double phase = cfg_.embed_scale * std::log(sde_.kernel_std(t));
    Vector e(2);
    e << std::sin(phase), std::cos(phase);
    return e;
  }

  /// (d + 2) x B network input for per-column times.
  Matrix input(const Matrix& x, std::span<const double> times) const {
    detail::require(x.rows() == dim(), "state dimension does not match the score network");
    detail::require(static_cast<Index>(times.size()) == x.cols(), "one time per column required");
    Matrix in(dim() + 2, x.cols());
    in.topRows(dim()) = x;
    for (Index b = 0; b < x.cols(); ++b) {
      check_time(times[static_cast<std::size_t>(b)]);
      in.bottomRows(2).col(b) = embedding(times[static_cast<std::size_t>(b)]);
    }
    return in;
  }

  Matrix input(const Matrix& x, double t) const {
    check_time(t);
    detail::require(x.rows() == dim(), "state dimension does not match the score network");
    Matrix in(dim() + 2, x.cols());
    in.topRows(dim()) = x;
    in.bottomRows(2) = embedding(t).replicate(1, x.cols());
    return in;
  }

  Matrix score(const Matrix& x, double t) const { return mlp_.forward(input(x, t)); }

  Matrix score_vjp(const Matrix& x, double t, const Matrix& g) const {
    Mlp::Cache cache;
    mlp_.forward(input(x, t), cache);
    return mlp_.backward(cache, g, nullptr).topRows(dim());
  }

 private:
  ScoreNetworkConfig cfg_;
  SdeSpec sde_;
  Mlp mlp_;
};

inline Vector score_forward(const ScoreNetwork& net, const Vector& x, double t) {
  return net.score(Matrix(x), t).col(0);
}

/// W / sigma_max(W) per layer (sigma from >= 20 power iterations off the persisted
/// state) when spectral normalization is on, the stored weights otherwise.
inline std::vector<Matrix> effective_weights(const ScoreNetwork& net) {
  std::vector<Matrix> out;
  for (const auto& layer : net.mlp().layers()) {
    if (!net.spectral_norm_enabled()) {
      out.push_back(layer.weight);
      continue;
    }
    const double sigma = converged_spectral_norm(layer.weight, layer.u);
    out.push_back(sigma > 0.0 ? Matrix(layer.weight / sigma) : layer.weight);
  }
  return out;
}

/// Product of the spectral norms of the weights the forward pass applies.
/// tanh is 1-Lipschitz, so this bounds the network's Lipschitz constant.
inline double lipschitz_bound(const Mlp& mlp) {
  double bound = 1.0;
  for (std::size_t l = 0; l < mlp.depth(); ++l) {
    const Matrix w = mlp.effective_weight(l);
    const auto& layer = mlp.layers()[l];
    Vector start = layer.u.size() == w.rows() ? layer.u : Vector::Ones(w.rows());
    if (!(start.norm() > 0.0)) start = Vector::Ones(w.rows());
    bound *= converged_spectral_norm(w, start);
  }
  return bound;
}

inline double lipschitz_bound(const ScoreNetwork& net) { return lipschitz_bound(net.mlp()); }

enum class LossWeighting { Literal, KernelVariance, KernelStd };

inline double loss_weight(LossWeighting w, const SdeSpec& sde, double t) {
  switch (w) {
    case LossWeighting::Literal:
      return 1.0;
    case LossWeighting::KernelVariance:
      return sde.kernel_variance(t);
    case LossWeighting::KernelStd:
      return sde.kernel_std(t);
  }
  return 1.0;
}

/// One denoising score matching batch: x_t = x0 + std(t) * noise.
struct DsmBatch {
  Matrix x0;
  std::vector<double> t;
  Matrix noise;
};

struct DsmResult {
  double loss = 0.0;
  MlpGradients gradients;
};

/// Conditional score targets -(x_t - x0) / var(t) and the perturbed inputs.
inline std::pair<Matrix, Matrix> dsm_inputs_and_targets(const DsmBatch& batch, const SdeSpec& sde) {
  detail::require(batch.x0.cols() == static_cast<Index>(batch.t.size()) && batch.noise.rows() == batch.x0.rows() &&
                      batch.noise.cols() == batch.x0.cols(),
                  "dsm batch shapes disagree");
  Matrix xt(batch.x0.rows(), batch.x0.cols());
  Matrix target(batch.x0.rows(), batch.x0.cols());
  for (Index b = 0; b < batch.x0.cols(); ++b) {
    const double t = batch.t[static_cast<std::size_t>(b)];
    const double var = sde.kernel_variance(t);
    const double sd = std::sqrt(var);
    xt.col(b) = batch.x0.col(b) + sd * batch.noise.col(b);
    target.col(b) = -(xt.col(b) - batch.x0.col(b)) / var;
  }
  return {std::move(xt), std::move(target)};
}

/// Mean over batch and coordinates of lambda(t) |output - target|^2.
inline double dsm_loss_of(const Matrix& output, const Matrix& target, const std::vector<double>& t, const SdeSpec& sde,
                          LossWeighting weighting) {
  double total = 0.0;
  for (Index b = 0; b < output.cols(); ++b) {
    const double w = loss_weight(weighting, sde, t[static_cast<std::size_t>(b)]);
    total += w * (output.col(b) - target.col(b)).squaredNorm();
  }
  return total / static_cast<double>(output.size());
}

inline DsmResult dsm_loss_and_grad(const ScoreNetwork& net, const DsmBatch& batch, const SdeSpec& sde,
                                   LossWeighting weighting = LossWeighting::Literal) {
  for (double t : batch.t) {
    if (!(t >= net.t_min() && t <= sde.horizon)) throw InvalidArgument("dsm time draw outside [t_min, T]");
  }
  auto [xt, target] = dsm_inputs_and_targets(batch, sde);
  Mlp::Cache cache;
  const Matrix out = net.mlp().forward(net.input(xt, batch.t), cache);
  DsmResult res;
  res.loss = dsm_loss_of(out, target, batch.t, sde, weighting);
  if (!std::isfinite(res.loss)) throw TrainingDivergence("denoising score matching loss is not finite");
  Matrix grad_out = out - target;
  const double norm = 2.0 / static_cast<double>(out.size());
  for (Index b = 0; b < out.cols(); ++b) {
    const double w = loss_weight(weighting, sde, batch.t[static_cast<std::size_t>(b)]);
    grad_out.col(b) *= norm * w;
  }
  net.mlp().backward(cache, grad_out, &res.gradients);
  return res;
}

struct ValidationGrid {
  double lo = -3.0;
  double hi = 3.0;
  Index points = 61;
  std::vector<double> times{0.1, 0.5, 1.0};
};

struct ValidationResult {
  double mse = 0.0;
  double max_error = 0.0;
};

/// Network vs exact perturbed score over a tensor grid (per axis `points` nodes in [lo, hi]).
template <ScoreModel Score>
ValidationResult validate_score(const Score& score, const AnalyticDistribution& dist, const SdeSpec& sde,
                                const ValidationGrid& grid) {
  const Index d = dist.dim();
  const Index per_axis = d == 1 ? grid.points : std::max<Index>(2, grid.points / 4);
  Index total = 1;
  for (Index j = 0; j < d; ++j) total *= per_axis;
  Matrix x(d, total);
  for (Index c = 0; c < total; ++c) {
    Index rem = c;
    for (Index j = 0; j < d; ++j) {
      const Index i = rem % per_axis;
      rem /= per_axis;
      x(j, c) = grid.lo + (grid.hi - grid.lo) * static_cast<double>(i) / static_cast<double>(per_axis - 1);
    }
  }
  ValidationResult res;
  double sum = 0.0;
  Index count = 0;
  for (double t : grid.times) {
    const Matrix s = score.score(x, t);
    for (Index c = 0; c < total; ++c) {
      const Vector err = s.col(c) - analytic_perturbed_score(dist, sde, x.col(c), t);
      sum += err.squaredNorm();
      res.max_error = std::max(res.max_error, err.cwiseAbs().maxCoeff());
      count += d;
    }
  }
  res.mse = sum / static_cast<double>(count);
  return res;
}

struct TrainConfig {
  Index batch_size = 256;
  double learning_rate = 1e-3;
  /// Cosine-annealed towards this rate; equal to learning_rate means constant.
  double final_learning_rate = 1e-3;
  Index steps = 5000;
  LossWeighting weighting = LossWeighting::Literal;
  /// Pair every noise draw with its negation (same x0 and t).
  bool antithetic = true;
  /// Stratify the time draws of each batch over [t_min, T].
  bool stratified_time = true;
  /// Exponential moving average of the parameters, copied into the network at the end; 0 disables.
  double ema_decay = 0.0;
  double t_min = 0.01;
  std::uint64_t seed = 0;
  ValidationGrid validation;

  void validate(const SdeSpec& sde) const {
    detail::require(batch_size >= 1, "batch size must be positive");
    detail::require(steps >= 0, "step count must be non-negative");
    detail::require(learning_rate > 0.0 && final_learning_rate > 0.0, "learning rates must be positive");
    detail::require(t_min > 0.0 && t_min < sde.horizon, "t_min must lie in (0, T)");
    detail::require(ema_decay >= 0.0 && ema_decay < 1.0, "ema decay must lie in [0, 1)");
  }
};

struct TrainingReport {
  std::vector<double> loss_trace;
  double initial_validation_mse = 0.0;
  double final_validation_mse = 0.0;
  double final_validation_max_error = 0.0;
  double lipschitz_bound = 0.0;
  double wall_seconds = 0.0;
  Index steps_completed = 0;
  bool diverged = false;
  std::string message;
  /// Hash of every data, time and noise draw consumed.
  std::uint64_t stream_fingerprint = 0;
};

/// Adam on the denoising score matching loss. With spectral normalization each
/// step first advances the power iteration once per layer; the network is
/// re-certified when training stops.
inline TrainingReport train_score(ScoreNetwork& net, const AnalyticDistribution& data, const SdeSpec& sde,
                                  const TrainConfig& cfg) {
  cfg.validate(sde);
  detail::require(data.dim() == net.dim(), "training target dimension does not match the network");
  detail::require(cfg.t_min >= net.t_min(), "training t_min must not undercut the network's t_min");
  const auto start = std::chrono::steady_clock::now();
  TrainingReport report;
  report.initial_validation_mse = validate_score(net, data, sde, cfg.validation).mse;

  auto data_stream = rng::Stream::keyed(cfg.seed, rng::Tag::Data);
  auto time_stream = rng::Stream::keyed(cfg.seed, rng::Tag::Time);
  auto noise_stream = rng::Stream::keyed(cfg.seed, rng::Tag::Noise);
  io::Fnv1a fingerprint;

  Vector params = net.mlp().parameters();
  Vector averaged = params;
  Adam adam(params.size(), cfg.learning_rate);
  const Index d = net.dim();
  for (Index step = 0; step < cfg.steps; ++step) {
    if (cfg.final_learning_rate != cfg.learning_rate) {
      const double progress = static_cast<double>(step) / static_cast<double>(std::max<Index>(1, cfg.steps - 1));
      const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      adam.set_learning_rate(cfg.final_learning_rate + (cfg.learning_rate - cfg.final_learning_rate) * c);
    }
    if (net.spectral_norm_enabled()) net.mlp().update_spectral_state(1);
    DsmBatch batch;
    if (cfg.antithetic) {
      const Index half = (cfg.batch_size + 1) / 2;
      const Matrix x0 = data.sample(data_stream, half);
      const Matrix eps = noise_stream.normal_matrix(d, half);
      batch.x0.resize(d, 2 * half);
      batch.noise.resize(d, 2 * half);
      batch.x0 << x0, x0;
      batch.noise << eps, -eps;
      batch.t.resize(static_cast<std::size_t>(2 * half));
      for (Index i = 0; i < half; ++i) {
        // One draw per equal-width stratum keeps each t marginally uniform.
        const double u = cfg.stratified_time ? (static_cast<double>(i) + time_stream.uniform()) / static_cast<double>(half)
                                             : time_stream.uniform();
        const double t = cfg.t_min + (sde.horizon - cfg.t_min) * u;
        batch.t[static_cast<std::size_t>(i)] = t;
        batch.t[static_cast<std::size_t>(i + half)] = t;
      }
    } else {
      batch.x0 = data.sample(data_stream, cfg.batch_size);
      batch.t.resize(static_cast<std::size_t>(cfg.batch_size));
      for (double& t : batch.t) t = time_stream.uniform(cfg.t_min, sde.horizon);
      batch.noise = noise_stream.normal_matrix(d, cfg.batch_size);
    }
    for (Index i = 0; i < batch.x0.size(); ++i) fingerprint.add_double(batch.x0.data()[i]);
    for (double t : batch.t) fingerprint.add_double(t);
    for (Index i = 0; i < batch.noise.size(); ++i) fingerprint.add_double(batch.noise.data()[i]);

    DsmResult res;
    try {
      res = dsm_loss_and_grad(net, batch, sde, cfg.weighting);
    } catch (const TrainingDivergence& e) {
      report.diverged = true;
      report.message = e.what();
      break;
    }
    report.loss_trace.push_back(res.loss);
    adam.step(params, Mlp::flatten(res.gradients));
    if (!params.allFinite()) {
      report.diverged = true;
      report.message = "parameters became non-finite";
      break;
    }
    net.mlp().set_parameters(params);
    if (cfg.ema_decay > 0.0) averaged = cfg.ema_decay * averaged + (1.0 - cfg.ema_decay) * params;
    report.steps_completed = step + 1;
  }
  if (cfg.ema_decay > 0.0 && !report.diverged && report.steps_completed > 0) net.mlp().set_parameters(averaged);
  net.certify();
  report.stream_fingerprint = fingerprint.value();
  if (!report.diverged) {
    const auto val = validate_score(net, data, sde, cfg.validation);
    report.final_validation_mse = val.mse;
    report.final_validation_max_error = val.max_error;
  } else {
    report.final_validation_mse = std::numeric_limits<double>::quiet_NaN();
    report.final_validation_max_error = std::numeric_limits<double>::quiet_NaN();
  }
  report.lipschitz_bound = lipschitz_bound(net);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// Checkpoint: "BSSN", u32 version, u64 d, u64 layer count, u64 sizes[count + 1],
// u32 flags (bit 0: spectral norm), f64 sigma_min, sigma_max, horizon, t_min,
// embed_scale, u64 seed, then per layer the weight (column-major), bias, u, v
// and sigma, all little-endian f64.
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const ScoreNetwork& net, const std::string& path) {
  auto os = io::open_output(path, true);
  io::write_magic(os, "BSSN");
  io::write_u32(os, kCheckpointVersion);
  io::write_u64(os, static_cast<std::uint64_t>(net.dim()));
  const auto sizes = net.mlp().sizes();
  io::write_u64(os, static_cast<std::uint64_t>(net.mlp().depth()));
  for (Index s : sizes) io::write_u64(os, static_cast<std::uint64_t>(s));
  io::write_u32(os, net.spectral_norm_enabled() ? 1u : 0u);
  io::write_f64(os, net.sde().sigma_min);
  io::write_f64(os, net.sde().sigma_max);
  io::write_f64(os, net.sde().horizon);
  io::write_f64(os, net.config().t_min);
  io::write_f64(os, net.config().embed_scale);
  io::write_u64(os, net.config().seed);
  for (const auto& layer : net.mlp().layers()) {
    io::write_f64s(os, std::span<const double>(layer.weight.data(), static_cast<std::size_t>(layer.weight.size())));
    io::write_f64s(os, std::span<const double>(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())));
    io::write_f64s(os, std::span<const double>(layer.u.data(), static_cast<std::size_t>(layer.u.size())));
    io::write_f64s(os, std::span<const double>(layer.v.data(), static_cast<std::size_t>(layer.v.size())));
    io::write_f64(os, layer.sigma);
  }
  if (!os) throw InvalidArgument("failed writing checkpoint: " + path);
}

inline ScoreNetwork load_checkpoint(const std::string& path) {
  auto is = io::open_input(path, true);
  io::expect_magic(is, "BSSN");
  if (io::read_u32(is) != kCheckpointVersion) throw InvalidArgument("unsupported checkpoint version");
  ScoreNetworkConfig cfg;
  cfg.dim = static_cast<Index>(io::read_u64(is));
  const auto depth = io::read_u64(is);
  detail::require(depth >= 2 && depth < 1024, "corrupt checkpoint layer count");
  std::vector<Index> sizes(depth + 1);
  for (auto& s : sizes) s = static_cast<Index>(io::read_u64(is));
  detail::require(sizes.front() == cfg.dim + 2 && sizes.back() == cfg.dim, "checkpoint sizes do not match its dimension");
  cfg.spectral_norm = (io::read_u32(is) & 1u) != 0;
  SdeSpec sde;
  sde.sigma_min = io::read_f64(is);
  sde.sigma_max = io::read_f64(is);
  sde.horizon = io::read_f64(is);
  sde.validate();
  cfg.t_min = io::read_f64(is);
  cfg.embed_scale = io::read_f64(is);
  cfg.seed = io::read_u64(is);
  cfg.hidden_layers = static_cast<Index>(depth) - 1;
  cfg.width = sizes[1];
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l < depth; ++l) {
    DenseLayer layer;
    layer.weight.resize(sizes[l + 1], sizes[l]);
    layer.bias.resize(sizes[l + 1]);
    layer.u.resize(sizes[l + 1]);
    layer.v.resize(sizes[l]);
    io::read_f64s(is, std::span<double>(layer.weight.data(), static_cast<std::size_t>(layer.weight.size())));
    io::read_f64s(is, std::span<double>(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())));
    io::read_f64s(is, std::span<double>(layer.u.data(), static_cast<std::size_t>(layer.u.size())));
    io::read_f64s(is, std::span<double>(layer.v.data(), static_cast<std::size_t>(layer.v.size())));
    layer.sigma = io::read_f64(is);
    layers.push_back(std::move(layer));
  }
  return ScoreNetwork(cfg, sde, Mlp(std::move(layers), cfg.spectral_norm));
}

}  // namespace bsdiff
