#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "bsdiff/errors.hpp"
#include "bsdiff/io.hpp"
#include "bsdiff/mlp.hpp"
#include "bsdiff/score_concept.hpp"
#include "bsdiff/sde.hpp"
#include "bsdiff/stochastic.hpp"

namespace bsdiff {

/// f(s, z, t) = a(t) s + b z + offset, coordinatewise. a(t) is either a
/// constant or the squared diffusion g(t)^2 of an SDE.
struct GeneratorFn {
  enum class ScoreCoefficient { Constant, DiffusionSquared };

  ScoreCoefficient kind = ScoreCoefficient::Constant;
  double a = 0.0;
  SdeSpec sde{};
  double b = 0.0;
  /// Additive constant; lets closed-form linear BSDEs be posed.
  double offset = 0.0;

  static GeneratorFn null() { return {}; }
  static GeneratorFn linear(double a, double b) { return {ScoreCoefficient::Constant, a, {}, b, 0.0}; }
  static GeneratorFn constant(double kappa) { return {ScoreCoefficient::Constant, 0.0, {}, 0.0, kappa}; }
  static GeneratorFn diffusion_squared(const SdeSpec& sde, double b = 0.0) {
    sde.validate();
    return {ScoreCoefficient::DiffusionSquared, 0.0, sde, b, 0.0};
  }

  double score_coefficient(double t) const {
    if (kind == ScoreCoefficient::Constant) return a;
    const double g = sde.diffusion(t);
    return g * g;
  }

  bool uses_score() const { return kind == ScoreCoefficient::DiffusionSquared || a != 0.0; }

  /// max(sup_t |a(t)|, |b|) over [0, T].
  double lipschitz_constant() const {
    const double sup_a = kind == ScoreCoefficient::Constant ? std::abs(a) : score_coefficient(sde.horizon);
    return std::max(sup_a, std::abs(b));
  }

  Matrix operator()(const Matrix& score, const Matrix& z, double t) const {
    detail::require(score.rows() == z.rows() && score.cols() == z.cols(), "generator inputs differ in shape");
    Matrix out = score_coefficient(t) * score + b * z;
    if (offset != 0.0) out.array() += offset;
    return out;
  }

  std::string describe() const {
    std::string s = kind == ScoreCoefficient::Constant ? "a=" + io::format_double(a) : std::string("a=g^2");
    return s + ";b=" + io::format_double(b) + ";offset=" + io::format_double(offset);
  }
};

inline Vector eval_generator(const GeneratorFn& gen, const Vector& score, const Vector& z, double t) {
  detail::require(score.size() == z.size(), "score and z must have the same dimension");
  Vector out = gen(Matrix(score), Matrix(z), t).col(0);
  if (!out.allFinite()) throw NumericalError("generator produced a non-finite value");
  return out;
}

/// Y_T: either a fixed state or a closed-form function of w_T.
class TerminalCondition {
 public:
  using Map = std::function<Vector(const Vector&)>;

  static TerminalCondition constant(Vector xi) {
    detail::require(xi.size() >= 1 && xi.allFinite(), "terminal value must be finite");
    TerminalCondition tc;
    tc.dim_ = xi.size();
    tc.value_ = std::move(xi);
    tc.name_ = "constant";
    return tc;
  }
  static TerminalCondition of_terminal_noise(Index dim, Map map, std::string name) {
    detail::require(dim >= 1 && map != nullptr, "terminal map needs a dimension and a function");
    TerminalCondition tc;
    tc.dim_ = dim;
    tc.map_ = std::move(map);
    tc.name_ = std::move(name);
    return tc;
  }
  /// Y_T = w_T, solved by Y_t = w_t, Z_t = 1.
  static TerminalCondition brownian(Index dim) {
    return of_terminal_noise(dim, [](const Vector& w) { return w; }, "brownian");
  }

  bool is_constant() const { return map_ == nullptr; }
  Index dim() const { return dim_; }
  const Vector& value() const {
    detail::require(is_constant(), "terminal condition is not constant");
    return value_;
  }
  const std::string& name() const { return name_; }

  /// d x M terminal values given d x M terminal noise.
  Matrix evaluate(const Matrix& w_terminal) const {
    if (is_constant()) return value_.replicate(1, w_terminal.cols());
    Matrix out(dim_, w_terminal.cols());
    for (Index m = 0; m < w_terminal.cols(); ++m) out.col(m) = map_(w_terminal.col(m));
    return out;
  }

 private:
  Index dim_ = 0;
  Vector value_;
  Map map_;
  std::string name_;
};

struct BasisConfig {
  Index degree = 2;
  double ridge = 1e-8;

  void validate() const {
    detail::require(degree >= 0, "basis degree must be nonnegative");
    detail::require(ridge >= 0.0 && std::isfinite(ridge), "ridge must be nonnegative");
  }
};

/// C(d + p, p).
inline Index feature_count(Index dim, Index degree) {
  double c = 1.0;
  for (Index i = 1; i <= degree; ++i) c = c * static_cast<double>(dim + i) / static_cast<double>(i);
  return static_cast<Index>(std::llround(c));
}

namespace detail {

/// Exponent tuples ordered by total degree, then lexicographically descending
/// on the leading coordinate (so degree 1 reads w_1, w_2, ...).
inline std::vector<std::vector<Index>> monomial_exponents(Index dim, Index degree) {
  std::vector<std::vector<Index>> out;
  std::vector<Index> current(static_cast<std::size_t>(dim), 0);
  std::function<void(Index, Index)> fill = [&](Index pos, Index left) {
    if (pos == dim - 1) {
      current[static_cast<std::size_t>(pos)] = left;
      out.push_back(current);
      return;
    }
    for (Index e = left; e >= 0; --e) {
      current[static_cast<std::size_t>(pos)] = e;
      fill(pos + 1, left - e);
    }
  };
  for (Index total = 0; total <= degree; ++total) fill(0, total);
  return out;
}

}  // namespace detail

/// M x F design matrix for the columns of a d x M block of noise positions.
inline Matrix basis_matrix(const Matrix& w, const BasisConfig& cfg) {
  cfg.validate();
  const Index d = w.rows();
  const auto exps = detail::monomial_exponents(d, cfg.degree);
  Matrix out(w.cols(), static_cast<Index>(exps.size()));
  for (Index m = 0; m < w.cols(); ++m) {
    for (std::size_t f = 0; f < exps.size(); ++f) {
      double v = 1.0;
      for (Index j = 0; j < d; ++j)
        for (Index e = 0; e < exps[f][static_cast<std::size_t>(j)]; ++e) v *= w(j, m);
      out(m, static_cast<Index>(f)) = v;
    }
  }
  return out;
}

inline Vector basis_features(const Vector& w, const BasisConfig& cfg) {
  return basis_matrix(Matrix(w), cfg).row(0).transpose();
}

struct LeastSquaresFit {
  Matrix coefficients;  // F x d
  double residual_rms = 0.0;
};

/// Solves (X^T X + ridge I) alpha = X^T Y.
inline LeastSquaresFit least_squares_fit(const Matrix& features, const Matrix& targets, double ridge) {
  const Index m = features.rows();
  const Index f = features.cols();
  detail::require(targets.rows() == m, "features and targets disagree on the sample count");
  if (m < f) {
    throw UnderdeterminedRegression("regression has " + std::to_string(m) + " samples for " + std::to_string(f) +
                                    " features");
  }
  if (!features.allFinite() || !targets.allFinite() || !(ridge >= 0.0) || !std::isfinite(ridge)) {
    throw InvalidArgument("least-squares inputs must be finite");
  }
  Matrix gram = features.transpose() * features;
  gram.diagonal().array() += ridge;
  LeastSquaresFit fit;
  Eigen::LDLT<Matrix> ldlt(gram);
  fit.coefficients = ldlt.solve(features.transpose() * targets);
  if (ldlt.info() != Eigen::Success || !fit.coefficients.allFinite()) {
    throw NumericalError("normal equations are singular");
  }
  const Matrix resid = features * fit.coefficients - targets;
  fit.residual_rms = targets.size() > 0 ? std::sqrt(resid.squaredNorm() / static_cast<double>(targets.size())) : 0.0;
  return fit;
}

/// Z_beta(t, y): small MLP over [t, y] used by the shooting solver.
struct ControlNetwork {
  Mlp mlp;
  Matrix operator()(double t, const Matrix& y) const { return mlp.forward(input(t, y)); }
  static Matrix input(double t, const Matrix& y) {
    Matrix in(y.rows() + 1, y.cols());
    in.row(0).setConstant(t);
    in.bottomRows(y.rows()) = y;
    return in;
  }
};

struct BsdeDiagnostics {
  /// Per step k (index 0 unused): rms residuals of the z and y regressions.
  std::vector<double> z_residual;
  std::vector<double> y_residual;
  /// Mean of |f|^2 over every step and path visited while solving.
  double generator_sq_mean = 0.0;
  /// Shooting solver only.
  std::vector<double> loss_trace;
  double final_loss = 0.0;
  bool converged = true;
};

/// A solved BSDE. The z function at step k is evaluated either from the
/// per-step regression coefficients on w_k or from a control network on (t_k, Y_k).
struct BsdeSolution {
  enum class Method { RegressionMonteCarlo, DeepShooting };

  Method method = Method::RegressionMonteCarlo;
  Vector y0;
  /// Monte Carlo standard error of each y0 coordinate.
  Vector y0_stderr;
  TimeGrid grid{1.0, 1};
  BasisConfig basis;
  /// z_coeffs[k], y_coeffs[k] for k = 1..n-1 (F x d); entry 0 is unused.
  std::vector<Matrix> z_coeffs;
  std::vector<Matrix> y_coeffs;
  std::shared_ptr<const ControlNetwork> control;
  GeneratorFn generator;
  TerminalCondition terminal;
  std::shared_ptr<const AnyScore> score;
  std::uint64_t ensemble_seed = 0;
  Index ensemble_paths = 0;
  BsdeDiagnostics diagnostics;

  Index dim() const { return y0.size(); }

  /// Z at grid step k (0 <= k < n). Regression solutions reuse the step-1 fit at k = 0.
  Matrix z_at(Index k, const Matrix& w, const Matrix& y) const {
    detail::require(k >= 0 && k < grid.steps(), "z step out of range");
    if (method == Method::DeepShooting) return (*control)(grid.node(k), y);
    const Index kk = std::max<Index>(k, 1);
    if (kk >= static_cast<Index>(z_coeffs.size())) return Matrix::Zero(dim(), w.cols());
    return (basis_matrix(w, basis) * z_coeffs[static_cast<std::size_t>(kk)]).transpose();
  }

  Matrix score_at(const Matrix& y, double t) const {
    if (!generator.uses_score()) return Matrix::Zero(y.rows(), y.cols());
    return score->score(y, std::max(t, score->time_floor()));
  }
};

namespace detail {

inline void check_solver_inputs(const TerminalCondition& terminal, const TimeGrid& grid, const WienerEnsemble& ens,
                                const AnyScore& score) {
  require(terminal.dim() >= 1, "terminal condition is empty");
  require_matching(grid, ens, terminal.dim());
  require(score.dim() == terminal.dim(), "score model dimension does not match the terminal condition");
}

inline void require_finite(const Matrix& m, const char* what, Index step) {
  if (!m.allFinite()) throw NumericalError(std::string(what) + " became non-finite at step " + std::to_string(step));
}

}  // namespace detail

/// Backward regression Monte Carlo over the ensemble, t = n-1 .. 1, then Y0 by averaging.
template <DifferentiableScoreModel Score>
BsdeSolution solve_regression_mc(const Score& score_model, const GeneratorFn& gen, const TerminalCondition& terminal,
                                 const TimeGrid& grid, const WienerEnsemble& ens, const BasisConfig& basis = {}) {
  auto score = std::make_shared<const AnyScore>(make_any_score(score_model));
  detail::check_solver_inputs(terminal, grid, ens, *score);
  basis.validate();
  const Index n = grid.steps();
  const Index d = terminal.dim();
  const Index paths = ens.paths();
  const Index features = feature_count(d, basis.degree);
  if (4 * features > paths) {
    throw UnderdeterminedRegression("basis has " + std::to_string(features) + " features but only " +
                                    std::to_string(paths) + " paths (need features <= M/4)");
  }
  const double dt = grid.dt();

  BsdeSolution sol;
  sol.grid = grid;
  sol.basis = basis;
  sol.generator = gen;
  sol.terminal = terminal;
  sol.score = score;
  sol.ensemble_seed = ens.seed();
  sol.ensemble_paths = paths;
  sol.z_coeffs.assign(static_cast<std::size_t>(n), Matrix());
  sol.y_coeffs.assign(static_cast<std::size_t>(n), Matrix());
  sol.diagnostics.z_residual.assign(static_cast<std::size_t>(n), 0.0);
  sol.diagnostics.y_residual.assign(static_cast<std::size_t>(n), 0.0);

  double gen_sq = 0.0;
  Index gen_count = 0;
  Matrix y_next = terminal.evaluate(ens.positions_at(n));
  detail::require_finite(y_next, "terminal values", n);
  Matrix z_fit = Matrix::Zero(d, paths);
  for (Index t = n - 1; t >= 1; --t) {
    const double time = grid.node(t);
    const Matrix phi = basis_matrix(ens.positions_at(t), basis);
    // Centering y_{t+1} leaves E[. | w_t] unchanged (E[dw_t | w_t] = 0) and removes
    // the c dw / dt sampling noise a constant level would otherwise feed into z.
    const Vector level = y_next.rowwise().mean();
    const Matrix z_target = (y_next.colwise() - level).array() * ens.increments_at(t).array() / dt;
    LeastSquaresFit zf = least_squares_fit(phi, z_target.transpose(), basis.ridge);
    z_fit = (phi * zf.coefficients).transpose();
    detail::require_finite(z_fit, "z", t);

    const Matrix f = gen(sol.score_at(y_next, time), z_fit, time);
    detail::require_finite(f, "generator", t);
    gen_sq += f.squaredNorm();
    gen_count += paths;
    LeastSquaresFit yf = least_squares_fit(phi, (y_next + dt * f).transpose(), basis.ridge);
    y_next = (phi * yf.coefficients).transpose();
    detail::require_finite(y_next, "y", t);

    sol.z_coeffs[static_cast<std::size_t>(t)] = std::move(zf.coefficients);
    sol.y_coeffs[static_cast<std::size_t>(t)] = std::move(yf.coefficients);
    sol.diagnostics.z_residual[static_cast<std::size_t>(t)] = zf.residual_rms;
    sol.diagnostics.y_residual[static_cast<std::size_t>(t)] = yf.residual_rms;
  }
  // With n == 1 there is no regression step; Z stays zero and y_1 = xi.
  const Matrix f0 = gen(sol.score_at(y_next, grid.node(0)), z_fit, grid.node(0));
  detail::require_finite(f0, "generator", 0);
  gen_sq += f0.squaredNorm();
  gen_count += paths;
  const Matrix summands = y_next + dt * f0;
  sol.y0 = summands.rowwise().mean();
  const double denom = paths > 1 ? static_cast<double>(paths - 1) : 1.0;
  sol.y0_stderr = ((summands.colwise() - sol.y0).rowwise().squaredNorm() / denom / static_cast<double>(paths))
                      .array()
                      .sqrt()
                      .matrix();
  sol.diagnostics.generator_sq_mean = gen_sq / static_cast<double>(gen_count);
  detail::require_finite(Matrix(sol.y0), "y0", 0);
  return sol;
}

struct ShootingConfig {
  Index iterations = 200;
  double learning_rate = 1e-3;
  /// Plain gradient step on y0; 0.5 is the exact minimizer step when f does not depend on Y.
  double y0_learning_rate = 0.25;
  Index width = 32;
  Index hidden_layers = 2;
  double init_scale = 0.01;
  double loss_threshold = 1e-3;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(iterations >= 0, "shooting iterations must be nonnegative");
    detail::require(learning_rate > 0.0 && y0_learning_rate > 0.0, "shooting learning rates must be positive");
    detail::require(width >= 1 && hidden_layers >= 1, "control network needs hidden layers");
    detail::require(init_scale >= 0.0, "init_scale must be nonnegative");
  }
};

namespace detail {

struct ShootingPass {
  double loss = 0.0;
  std::vector<Mlp::Cache> caches;
  std::vector<Matrix> states;  // Y_0..Y_n
  std::vector<Matrix> controls;
  Matrix terminal;
  double gen_sq_mean = 0.0;
};

inline ShootingPass shooting_forward(const ControlNetwork& ctl, const Vector& y0, const AnyScore& score,
                                     const GeneratorFn& gen, const TimeGrid& grid, const WienerEnsemble& ens,
                                     const Vector& xi) {
  const Index n = grid.steps();
  const Index paths = ens.paths();
  ShootingPass pass;
  pass.caches.resize(static_cast<std::size_t>(n));
  pass.states.reserve(static_cast<std::size_t>(n + 1));
  pass.states.push_back(y0.replicate(1, paths));
  double gen_sq = 0.0;
  for (Index k = 0; k < n; ++k) {
    const double t = grid.node(k);
    const Matrix& y = pass.states.back();
    Matrix z = ctl.mlp.forward(ControlNetwork::input(t, y), pass.caches[static_cast<std::size_t>(k)]);
    const Matrix s = gen.uses_score() ? score.score(y, std::max(t, score.time_floor())) : Matrix::Zero(y.rows(), paths);
    const Matrix f = gen(s, z, t);
    gen_sq += f.squaredNorm();
    Matrix next = y - f * grid.dt() + Matrix(z.array() * ens.increments_at(k).array());
    require_finite(next, "shooting state", k + 1);
    pass.controls.push_back(std::move(z));
    pass.states.push_back(std::move(next));
  }
  pass.terminal = pass.states.back().colwise() - xi;
  pass.loss = pass.terminal.colwise().squaredNorm().mean();
  pass.gen_sq_mean = gen_sq / static_cast<double>(n * paths);
  return pass;
}

}  // namespace detail

/// Joint gradient descent on y0 and a control network z(t, y) against the
/// shooting loss mean_m |Y_T - xi|^2 (backpropagation through the Euler scheme).
template <DifferentiableScoreModel Score>
BsdeSolution solve_deep_shooting(const Score& score_model, const GeneratorFn& gen, const TerminalCondition& terminal,
                                 const TimeGrid& grid, const WienerEnsemble& ens, const ShootingConfig& cfg = {},
                                 const Vector* y0_init = nullptr) {
  auto score = std::make_shared<const AnyScore>(make_any_score(score_model));
  detail::require(terminal.is_constant(), "deep shooting needs a constant terminal condition");
  detail::check_solver_inputs(terminal, grid, ens, *score);
  cfg.validate();
  const Index d = terminal.dim();
  const Index n = grid.steps();
  const Index paths = ens.paths();
  const Vector& xi = terminal.value();
  const double dt = grid.dt();

  std::vector<Index> sizes{d + 1};
  for (Index l = 0; l < cfg.hidden_layers; ++l) sizes.push_back(cfg.width);
  sizes.push_back(d);
  auto init = rng::Stream::keyed(cfg.seed, rng::Tag::Control);
  ControlNetwork ctl{Mlp(sizes, false, init, cfg.init_scale)};
  Vector y0 = y0_init ? *y0_init : xi;
  detail::require(y0.size() == d, "initial y0 has the wrong dimension");

  Vector params = ctl.mlp.parameters();
  Adam adam(params.size(), cfg.learning_rate);
  BsdeDiagnostics diag;
  for (Index it = 0; it < cfg.iterations; ++it) {
    detail::ShootingPass pass = detail::shooting_forward(ctl, y0, *score, gen, grid, ens, xi);
    diag.loss_trace.push_back(pass.loss);
    Matrix grad_y = 2.0 * pass.terminal / static_cast<double>(paths);
    MlpGradients grads = ctl.mlp.zero_gradients();
    for (Index k = n - 1; k >= 0; --k) {
      const double t = grid.node(k);
      const Matrix& y = pass.states[static_cast<std::size_t>(k)];
      const Matrix grad_z =
          Matrix(grad_y.array() * ens.increments_at(k).array()) - (gen.b * dt) * grad_y;
      Matrix grad_prev = grad_y;
      if (gen.uses_score()) {
        const double a = gen.score_coefficient(t);
        grad_prev += score->score_vjp(y, std::max(t, score->time_floor()), (-a * dt) * grad_y);
      }
      grad_prev += ctl.mlp.backward(pass.caches[static_cast<std::size_t>(k)], grad_z, &grads).bottomRows(d);
      grad_y = std::move(grad_prev);
    }
    const Vector grad_y0 = grad_y.rowwise().sum();
    Vector g = Mlp::flatten(grads);
    if (!g.allFinite() || !grad_y0.allFinite()) throw NumericalError("shooting gradients became non-finite");
    adam.step(params, g);
    ctl.mlp.set_parameters(params);
    y0 -= cfg.y0_learning_rate * grad_y0;
  }
  detail::ShootingPass last = detail::shooting_forward(ctl, y0, *score, gen, grid, ens, xi);
  diag.final_loss = last.loss;
  diag.converged = std::isfinite(last.loss) && last.loss <= cfg.loss_threshold;
  diag.generator_sq_mean = last.gen_sq_mean;

  BsdeSolution sol;
  sol.method = BsdeSolution::Method::DeepShooting;
  sol.y0 = y0;
  // Y_T - xi = (y0 - y0*) + noise; its spread over paths is the error of the fitted start.
  const Vector mean_gap = last.terminal.rowwise().mean();
  const double denom = paths > 1 ? static_cast<double>(paths - 1) : 1.0;
  sol.y0_stderr = ((last.terminal.colwise() - mean_gap).rowwise().squaredNorm() / denom / static_cast<double>(paths))
                      .array()
                      .sqrt()
                      .matrix();
  sol.grid = grid;
  sol.control = std::make_shared<const ControlNetwork>(std::move(ctl));
  sol.generator = gen;
  sol.terminal = terminal;
  sol.score = score;
  sol.ensemble_seed = ens.seed();
  sol.ensemble_paths = paths;
  sol.diagnostics = std::move(diag);
  return sol;
}

struct ReplayOptions {
  /// Girsanov gain on Z, applied in the generator argument and the noise term.
  double lambda_z = 1.0;
  /// Per-path starting states (d x M); empty means sol.y0 on every path.
  Matrix start;
};

/// Y_{k+1} = Y_k - f(s(Y_k, t_k), z_k) dt + z_k dw_k from y0 over every path.
inline PathSet forward_replay(const BsdeSolution& sol, const WienerEnsemble& wiener, const ReplayOptions& opts = {}) {
  const Index d = sol.dim();
  detail::require_matching(sol.grid, wiener, d);
  detail::require(opts.lambda_z >= 0.0, "lambda_z must be nonnegative");
  const Index paths = wiener.paths();
  if (opts.start.size() > 0) {
    detail::require(opts.start.rows() == d && opts.start.cols() == paths, "replay start has the wrong shape");
  }
  const Index n = sol.grid.steps();
  const double dt = sol.grid.dt();
  PathSet out;
  out.times = sol.grid.nodes();
  out.states.reserve(static_cast<std::size_t>(n + 1));
  out.states.push_back(opts.start.size() > 0 ? opts.start : Matrix(sol.y0.replicate(1, paths)));
  for (Index k = 0; k < n; ++k) {
    const double t = sol.grid.node(k);
    const Matrix& y = out.states.back();
    const Matrix z = opts.lambda_z * sol.z_at(k, wiener.positions_at(k), y);
    const Matrix f = sol.generator(sol.score_at(y, t), z, t);
    Matrix next = y - f * dt + Matrix(z.array() * wiener.increments_at(k).array());
    detail::require_finite(next, "replayed state", k + 1);
    out.states.push_back(std::move(next));
  }
  return out;
}

/// Provenance hash over the solver configuration and ensemble identity.
inline std::uint64_t solution_config_hash(const BsdeSolution& sol) {
  io::Fnv1a h;
  h.add_u64(static_cast<std::uint64_t>(sol.method));
  h.add_double(sol.grid.horizon());
  h.add_u64(static_cast<std::uint64_t>(sol.grid.steps()));
  h.add_u64(static_cast<std::uint64_t>(sol.basis.degree));
  h.add_double(sol.basis.ridge);
  h.add_bytes(sol.generator.describe());
  h.add_bytes(sol.terminal.name());
  if (sol.terminal.is_constant())
    for (Index j = 0; j < sol.terminal.dim(); ++j) h.add_double(sol.terminal.value()(j));
  h.add_u64(sol.ensemble_seed);
  h.add_u64(static_cast<std::uint64_t>(sol.ensemble_paths));
  return h.value();
}

/// Rows step,t,coefficient,z,y; coefficient c indexes the F x d matrices column-major.
inline void write_solution_csv(const BsdeSolution& sol, std::ostream& os) {
  os << "step,t,coefficient,z,y\n";
  for (std::size_t k = 1; k < sol.z_coeffs.size(); ++k) {
    const Matrix& z = sol.z_coeffs[k];
    const Matrix& y = sol.y_coeffs[k];
    for (Index c = 0; c < z.size(); ++c) {
      os << k << ',' << io::format_double(sol.grid.node(static_cast<Index>(k))) << ',' << c << ','
         << io::format_double(z.data()[c]) << ',' << io::format_double(y.data()[c]) << '\n';
    }
  }
}

/// Flat key=value summary record.
inline void write_solution_summary(const BsdeSolution& sol, std::ostream& os) {
  os << "method=" << (sol.method == BsdeSolution::Method::RegressionMonteCarlo ? "regression_mc" : "deep_shooting")
     << '\n';
  for (Index j = 0; j < sol.dim(); ++j) {
    os << "y0_" << (j + 1) << '=' << io::format_double(sol.y0(j)) << '\n';
    os << "y0_stderr_" << (j + 1) << '=' << io::format_double(sol.y0_stderr(j)) << '\n';
  }
  double z_max = 0.0;
  double y_max = 0.0;
  for (double r : sol.diagnostics.z_residual) z_max = std::max(z_max, r);
  for (double r : sol.diagnostics.y_residual) y_max = std::max(y_max, r);
  os << "max_z_residual=" << io::format_double(z_max) << '\n';
  os << "max_y_residual=" << io::format_double(y_max) << '\n';
  os << "generator_sq_mean=" << io::format_double(sol.diagnostics.generator_sq_mean) << '\n';
  if (sol.method == BsdeSolution::Method::DeepShooting) {
    os << "shooting_loss=" << io::format_double(sol.diagnostics.final_loss) << '\n';
    os << "converged=" << (sol.diagnostics.converged ? 1 : 0) << '\n';
  }
  os << "paths=" << sol.ensemble_paths << '\n';
  os << "steps=" << sol.grid.steps() << '\n';
  os << "ensemble_seed=" << sol.ensemble_seed << '\n';
  os << "config_hash=" << io::hex64(solution_config_hash(sol)) << '\n';
}

}  // namespace bsdiff
