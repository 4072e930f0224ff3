#pragma once

#include <concepts>
#include <functional>
#include <memory>

#include <Eigen/Dense>

namespace bsdiff {

/// Anything that maps a d x B batch of states at time t to a d x B batch of scores.
template <class S>
concept ScoreModel = requires(const S& s, const Eigen::MatrixXd& x, double t) {
  { s.dim() } -> std::convertible_to<Eigen::Index>;
  { s.score(x, t) } -> std::convertible_to<Eigen::MatrixXd>;
};

/// Score models that can also pull a cotangent back to the state: column b of
/// the result is J_b^T g_b where J_b is the state Jacobian of column b.
template <class S>
concept DifferentiableScoreModel =
    ScoreModel<S> && requires(const S& s, const Eigen::MatrixXd& x, double t, const Eigen::MatrixXd& g) {
      { s.score_vjp(x, t, g) } -> std::convertible_to<Eigen::MatrixXd>;
    };

/// s(x, t) = 0.
class ZeroScore {
 public:
  explicit ZeroScore(Eigen::Index dim) : dim_(dim) {}
  Eigen::Index dim() const { return dim_; }
  Eigen::MatrixXd score(const Eigen::MatrixXd& x, double) const { return Eigen::MatrixXd::Zero(x.rows(), x.cols()); }
  Eigen::MatrixXd score_vjp(const Eigen::MatrixXd& x, double, const Eigen::MatrixXd&) const {
    return Eigen::MatrixXd::Zero(x.rows(), x.cols());
  }

 private:
  Eigen::Index dim_;
};

/// Type-erased, copyable handle to a score model, with the earliest time the
/// model may be queried (later solvers clamp to it).
class AnyScore {
 public:
  template <DifferentiableScoreModel S>
  explicit AnyScore(S model, double time_floor = 0.0) : time_floor_(time_floor) {
    auto shared = std::make_shared<const S>(std::move(model));
    dim_ = shared->dim();
    score_ = [shared](const Eigen::MatrixXd& x, double t) { return Eigen::MatrixXd(shared->score(x, t)); };
    vjp_ = [shared](const Eigen::MatrixXd& x, double t, const Eigen::MatrixXd& g) {
      return Eigen::MatrixXd(shared->score_vjp(x, t, g));
    };
  }

  Eigen::Index dim() const { return dim_; }
  double time_floor() const { return time_floor_; }
  Eigen::MatrixXd score(const Eigen::MatrixXd& x, double t) const { return score_(x, t); }
  Eigen::MatrixXd score_vjp(const Eigen::MatrixXd& x, double t, const Eigen::MatrixXd& g) const { return vjp_(x, t, g); }

 private:
  Eigen::Index dim_ = 0;
  double time_floor_ = 0.0;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, double)> score_;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, double, const Eigen::MatrixXd&)> vjp_;
};

/// Wraps a model, reading its t_min() as the time floor when it has one.
template <DifferentiableScoreModel S>
AnyScore make_any_score(S model) {
  if constexpr (requires { model.t_min(); }) {
    const double floor = model.t_min();
    return AnyScore(std::move(model), floor);
  } else {
    return AnyScore(std::move(model), 0.0);
  }
}

inline AnyScore make_any_score(AnyScore score) { return score; }

}  // namespace bsdiff
