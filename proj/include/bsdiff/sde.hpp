#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bsdiff/io.hpp"
#include "bsdiff/score_concept.hpp"
#include "bsdiff/stochastic.hpp"

namespace bsdiff {

/// Variance-exploding SDE dx = sigma(t) dw with sigma(t) = sigma_min (sigma_max / sigma_min)^t.
/// The Frozen kind (g = 0) exists for degenerate tests.
struct SdeSpec {
  enum class Kind { VarianceExploding, Frozen };

  Kind kind = Kind::VarianceExploding;
  double sigma_min = 0.01;
  double sigma_max = 5.0;
  double horizon = 1.0;

  static SdeSpec variance_exploding(double sigma_min = 0.01, double sigma_max = 5.0, double horizon = 1.0) {
    SdeSpec s{Kind::VarianceExploding, sigma_min, sigma_max, horizon};
    s.validate();
    return s;
  }
  static SdeSpec frozen(double horizon = 1.0) { return SdeSpec{Kind::Frozen, 0.01, 5.0, horizon}; }

  void validate() const {
    detail::require(std::isfinite(horizon) && horizon > 0.0, "sde horizon must be positive");
    if (kind == Kind::VarianceExploding) {
      detail::require(sigma_min > 0.0 && sigma_max > sigma_min && std::isfinite(sigma_max),
                      "VE sde needs 0 < sigma_min < sigma_max");
    }
  }

  void check_time(double t) const {
    if (!(t >= 0.0 && t <= horizon)) throw InvalidArgument("time outside [0, T]: " + io::format_double(t));
  }

  double log_ratio() const { return std::log(sigma_max / sigma_min); }

  /// f(x, t); zero for both supported kinds.
  Matrix drift(const Matrix& x, double) const { return Matrix::Zero(x.rows(), x.cols()); }

  /// g(t).
  double diffusion(double t) const {
    if (kind == Kind::Frozen) return 0.0;
    return sigma_min * std::exp(t * log_ratio());
  }

  /// Var[x_t | x_0] = int_0^t g(s)^2 ds.
  double kernel_variance(double t) const {
    if (kind == Kind::Frozen) return 0.0;
    const double lr = log_ratio();
    return sigma_min * sigma_min * std::expm1(2.0 * t * lr) / (2.0 * lr);
  }

  double kernel_std(double t) const { return std::sqrt(kernel_variance(t)); }
};

struct PerturbationKernel {
  double mean_coefficient;
  double std;
};

inline PerturbationKernel perturbation_kernel(const SdeSpec& sde, double t) {
  sde.check_time(t);
  return {1.0, sde.kernel_std(t)};
}

/// Per-step states of a bundle of paths: states[k] is d x M at times[k].
struct PathSet {
  std::vector<double> times;
  std::vector<Matrix> states;

  Index steps() const { return static_cast<Index>(states.size()) - 1; }
  Index paths() const { return states.empty() ? 0 : states.front().cols(); }
  Index dim() const { return states.empty() ? 0 : states.front().rows(); }
  const Matrix& terminal() const { return states.back(); }

  /// Column m of every step, as a d x (steps+1) matrix.
  Matrix path(Index m) const {
    Matrix out(dim(), static_cast<Index>(states.size()));
    for (std::size_t k = 0; k < states.size(); ++k) out.col(static_cast<Index>(k)) = states[k].col(m);
    return out;
  }
};

/// CSV with header path_id,step,t,x_1..x_d; rows grouped by path.
inline void write_paths_csv(const PathSet& paths, std::ostream& os) {
  os << "path_id,step,t";
  for (Index j = 0; j < paths.dim(); ++j) os << ",x_" << (j + 1);
  os << '\n';
  for (Index m = 0; m < paths.paths(); ++m) {
    for (std::size_t k = 0; k < paths.states.size(); ++k) {
      os << m << ',' << k << ',' << io::format_double(paths.times[k]);
      for (Index j = 0; j < paths.dim(); ++j) os << ',' << io::format_double(paths.states[k](j, m));
      os << '\n';
    }
  }
}

namespace detail {

inline void require_matching(const TimeGrid& grid, const WienerEnsemble& ens, Index dim) {
  require(ens.grid() == grid, "wiener ensemble grid does not match the time grid");
  require(ens.dim() == dim, "wiener ensemble dimension does not match the state dimension");
}

}  // namespace detail

/// Euler-Maruyama for the forward SDE over every path of the ensemble, all from x0.
inline PathSet simulate_forward(const SdeSpec& sde, const Vector& x0, const TimeGrid& grid, const WienerEnsemble& wiener) {
  detail::require_matching(grid, wiener, x0.size());
  detail::require(grid.horizon() <= sde.horizon + 1e-12, "time grid extends past the sde horizon");
  const Index n = grid.steps();
  PathSet out;
  out.times = grid.nodes();
  out.states.reserve(static_cast<std::size_t>(n + 1));
  out.states.push_back(x0.replicate(1, wiener.paths()));
  for (Index k = 0; k < n; ++k) {
    const double t = grid.node(k);
    const Matrix& x = out.states.back();
    Matrix next = x + sde.drift(x, t) * grid.dt() + sde.diffusion(t) * wiener.increments_at(k);
    out.states.push_back(std::move(next));
  }
  return out;
}

/// Single path m of the ensemble.
inline Matrix simulate_forward(const SdeSpec& sde, const Vector& x0, const TimeGrid& grid, const WienerEnsemble& wiener,
                               Index m) {
  return simulate_forward(sde, x0, grid, wiener.slice(m, 1)).path(0);
}

/// Time-reversed Euler-Maruyama for the generative SDE, from T down to t_stop.
///
/// The n grid steps are mapped onto [t_stop, T] (tau_k = t_stop + k (T - t_stop) / n)
/// and the ensemble increments are rescaled by sqrt(dtau / dt) so they keep the
/// Brownian variance of the shortened step. Step k -> k-1 consumes increment k-1:
///   x_{k-1} = x_k - [f(x_k, tau_k) - g(tau_k)^2 s(x_k, tau_k)] dtau + g(tau_k) dW.
/// The returned times descend from T to t_stop; states[0] is x_init.
template <ScoreModel Score>
PathSet sample_reverse(const SdeSpec& sde, const Score& score, const Matrix& x_init, const TimeGrid& grid,
                       const WienerEnsemble& wiener, double t_stop) {
  detail::require_matching(grid, wiener, x_init.rows());
  detail::require(score.dim() == x_init.rows(), "score model dimension does not match the state dimension");
  detail::require(wiener.paths() == x_init.cols(), "one wiener path per initial state required");
  detail::require(t_stop > 0.0 && t_stop < sde.horizon, "reverse sampling stop time must lie in (0, T)");
  const Index n = grid.steps();
  const double top = sde.horizon;
  const double dtau = (top - t_stop) / static_cast<double>(n);
  const double noise_scale = std::sqrt(dtau / grid.dt());
  auto tau = [&](Index k) { return k == n ? top : t_stop + static_cast<double>(k) * dtau; };

  PathSet out;
  out.times.reserve(static_cast<std::size_t>(n + 1));
  out.states.reserve(static_cast<std::size_t>(n + 1));
  out.times.push_back(top);
  out.states.push_back(x_init);
  for (Index k = n; k >= 1; --k) {
    const double t = tau(k);
    const Matrix& x = out.states.back();
    const double g = sde.diffusion(t);
    Matrix next = x - (sde.drift(x, t) - g * g * score.score(x, t)) * dtau +
                  (g * noise_scale) * wiener.increments_at(k - 1);
    if (!next.allFinite()) throw NumericalError("reverse sampling produced non-finite states");
    out.times.push_back(tau(k - 1));
    out.states.push_back(std::move(next));
  }
  return out;
}

}  // namespace bsdiff
