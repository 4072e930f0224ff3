#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "bsdiff/sde.hpp"
#include "bsdiff/stochastic.hpp"

namespace bsdiff {

/// Gaussian or equal-covariance Gaussian mixture target with closed-form perturbed scores.
/// A Gaussian is stored as a one-component mixture.
struct AnalyticDistribution {
  enum class Kind { Gaussian, GaussianMixture };

  Kind kind = Kind::Gaussian;
  std::vector<double> weights;
  std::vector<Vector> means;
  double variance = 1.0;  // common isotropic component variance

  static AnalyticDistribution gaussian(const Vector& mean, double variance) {
    AnalyticDistribution d{Kind::Gaussian, {1.0}, {mean}, variance};
    d.validate();
    return d;
  }

  static AnalyticDistribution mixture(std::vector<double> weights, std::vector<Vector> means, double variance) {
    AnalyticDistribution d{Kind::GaussianMixture, std::move(weights), std::move(means), variance};
    d.validate();
    return d;
  }

  /// Equal-weight two-component mixture at +-separation/2 along the first axis.
  static AnalyticDistribution symmetric_pair(Index dim, double separation, double variance) {
    Vector a = Vector::Zero(dim);
    Vector b = Vector::Zero(dim);
    a(0) = -0.5 * separation;
    b(0) = 0.5 * separation;
    return mixture({0.5, 0.5}, {a, b}, variance);
  }

  void validate() const {
    detail::require(!weights.empty() && weights.size() == means.size(), "mixture weights and means must align");
    detail::require(variance > 0.0 && std::isfinite(variance), "component variance must be positive");
    double total = 0.0;
    for (double w : weights) {
      detail::require(w > 0.0, "mixture weights must be positive");
      total += w;
    }
    detail::require(std::abs(total - 1.0) <= 1e-12, "mixture weights must sum to 1");
    const Index d = means.front().size();
    detail::require(d >= 1 && d <= 2, "analytic targets are limited to d in {1, 2}");
    for (const auto& m : means) detail::require(m.size() == d, "mixture means must share one dimension");
  }

  Index dim() const { return means.front().size(); }

  Vector mean() const {
    Vector m = Vector::Zero(dim());
    for (std::size_t i = 0; i < weights.size(); ++i) m += weights[i] * means[i];
    return m;
  }

  /// Per-coordinate variance of the marginal at kernel variance `extra`.
  Vector marginal_variance(double extra = 0.0) const {
    const Vector mu = mean();
    Vector v = Vector::Constant(dim(), variance + extra);
    for (std::size_t i = 0; i < weights.size(); ++i) v += weights[i] * (means[i] - mu).cwiseAbs2();
    return v;
  }

  /// d x count draws.
  Matrix sample(rng::Stream& stream, Index count) const {
    Matrix out(dim(), count);
    const double sd = std::sqrt(variance);
    for (Index c = 0; c < count; ++c) {
      std::size_t comp = 0;
      if (weights.size() > 1) {
        double u = stream.uniform();
        while (comp + 1 < weights.size() && u > weights[comp]) u -= weights[comp++];
      }
      for (Index j = 0; j < dim(); ++j) out(j, c) = means[comp](j) + sd * stream.normal();
    }
    return out;
  }
};

namespace detail {

/// Posterior component responsibilities at x for component variance s2.
inline std::vector<double> responsibilities(const AnalyticDistribution& dist, const Vector& x, double s2) {
  std::vector<double> logits(dist.weights.size());
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    logits[i] = std::log(dist.weights[i]) - (x - dist.means[i]).squaredNorm() / (2.0 * s2);
    hi = std::max(hi, logits[i]);
  }
  double total = 0.0;
  for (double& l : logits) {
    l = std::exp(l - hi);
    total += l;
  }
  for (double& l : logits) l /= total;
  return logits;
}

}  // namespace detail

/// grad_x log p_t(x) where p_t = p_data convolved with the VE kernel at time t.
inline Vector analytic_perturbed_score(const AnalyticDistribution& dist, const SdeSpec& sde, const Vector& x, double t) {
  sde.check_time(t);
  detail::require(x.size() == dist.dim(), "state dimension does not match the distribution");
  const double s2 = dist.variance + sde.kernel_variance(t);
  const auto r = detail::responsibilities(dist, x, s2);
  Vector posterior_mean = Vector::Zero(x.size());
  for (std::size_t i = 0; i < r.size(); ++i) posterior_mean += r[i] * dist.means[i];
  return -(x - posterior_mean) / s2;
}

/// log p_t(x), used by finite-difference oracles.
inline double analytic_log_density(const AnalyticDistribution& dist, const SdeSpec& sde, const Vector& x, double t) {
  const double s2 = dist.variance + sde.kernel_variance(t);
  const double d = static_cast<double>(x.size());
  double hi = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(dist.weights.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    terms[i] = std::log(dist.weights[i]) - (x - dist.means[i]).squaredNorm() / (2.0 * s2);
    hi = std::max(hi, terms[i]);
  }
  double total = 0.0;
  for (double v : terms) total += std::exp(v - hi);
  return hi + std::log(total) - 0.5 * d * std::log(2.0 * std::numbers::pi * s2);
}

/// Exact perturbed score of an analytic target, usable wherever a ScoreModel is expected.
class AnalyticScore {
 public:
  AnalyticScore(AnalyticDistribution dist, SdeSpec sde) : dist_(std::move(dist)), sde_(sde) {}

  Index dim() const { return dist_.dim(); }
  const AnalyticDistribution& distribution() const { return dist_; }
  const SdeSpec& sde() const { return sde_; }

  Matrix score(const Matrix& x, double t) const {
    Matrix out(x.rows(), x.cols());
    for (Index b = 0; b < x.cols(); ++b) out.col(b) = analytic_perturbed_score(dist_, sde_, x.col(b), t);
    return out;
  }

  /// Jacobian is -I/s2 + Cov_r(means)/s2^2 (symmetric), applied per column.
  Matrix score_vjp(const Matrix& x, double t, const Matrix& g) const {
    sde_.check_time(t);
    const double s2 = dist_.variance + sde_.kernel_variance(t);
    Matrix out(x.rows(), x.cols());
    for (Index b = 0; b < x.cols(); ++b) {
      const auto r = detail::responsibilities(dist_, x.col(b), s2);
      Vector mbar = Vector::Zero(x.rows());
      for (std::size_t i = 0; i < r.size(); ++i) mbar += r[i] * dist_.means[i];
      Matrix cov = Matrix::Zero(x.rows(), x.rows());
      for (std::size_t i = 0; i < r.size(); ++i) {
        const Vector c = dist_.means[i] - mbar;
        cov += r[i] * c * c.transpose();
      }
      out.col(b) = -g.col(b) / s2 + cov * g.col(b) / (s2 * s2);
    }
    return out;
  }

 private:
  AnalyticDistribution dist_;
  SdeSpec sde_;
};

}  // namespace bsdiff
