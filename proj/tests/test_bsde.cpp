#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <Eigen/QR>
#include <gtest/gtest.h>

#include "bsdiff/analytic.hpp"
#include "bsdiff/bsde.hpp"

using namespace bsdiff;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

double max_fitted_z(const BsdeSolution& sol, const WienerEnsemble& ens) {
  double out = 0.0;
  for (Index k = 0; k < sol.grid.steps(); ++k)
    out = std::max(out, sol.z_at(k, ens.positions_at(k), Matrix()).cwiseAbs().maxCoeff());
  return out;
}

std::map<std::string, std::string> parse_summary(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

const ZeroScore kZero1(1);

}  // namespace

TEST(Generator, NullIsZero) {
  const auto gen = GeneratorFn::null();
  EXPECT_TRUE(eval_generator(gen, vec({3.0, -1.0}), vec({2.0, 5.0}), 0.4).isZero(0.0));
  EXPECT_FALSE(gen.uses_score());
}

TEST(Generator, IdentityOnScore) {
  EXPECT_EQ(eval_generator(GeneratorFn::linear(1.0, 0.0), vec({2.0, -1.0}), vec({7.0, 7.0}), 0.1), vec({2.0, -1.0}));
}

TEST(Generator, LinearCombination) {
  EXPECT_EQ(eval_generator(GeneratorFn::linear(2.0, 3.0), vec({1.0}), vec({1.0}), 0.5), vec({5.0}));
}

TEST(Generator, DiffusionSquaredCoefficient) {
  const auto sde = SdeSpec::variance_exploding();
  const auto gen = GeneratorFn::diffusion_squared(sde);
  EXPECT_TRUE(gen.uses_score());
  for (double t : {0.0, 0.5, 1.0}) EXPECT_DOUBLE_EQ(gen.score_coefficient(t), std::pow(sde.diffusion(t), 2));
  EXPECT_NEAR(gen.lipschitz_constant(), 25.0, 1e-12);
}

TEST(Generator, ConstantOffset) {
  EXPECT_EQ(eval_generator(GeneratorFn::constant(0.7), vec({9.0}), vec({-4.0}), 0.2), vec({0.7}));
}

TEST(Generator, RejectsMismatchedDimensions) {
  EXPECT_THROW(eval_generator(GeneratorFn::null(), vec({1.0}), vec({1.0, 2.0}), 0.0), InvalidArgument);
}

TEST(Generator, LipschitzQuotientBounded) {
  // |f(s, z) - f(s', z')| <= max(sup|a|, |b|) (|s - s'| + |z - z'|).
  const auto sde = SdeSpec::variance_exploding();
  for (const auto& gen : {GeneratorFn::linear(2.0, -3.0), GeneratorFn::linear(-0.5, 0.1),
                          GeneratorFn::diffusion_squared(sde, 1.5)}) {
    const double bound = gen.lipschitz_constant();
    auto s = rng::Stream::keyed(31, rng::Tag::Probe);
    double worst = 0.0;
    for (int i = 0; i < 100000; ++i) {
      const double t = s.uniform();
      const Vector s1 = 5.0 * s.normal_matrix(2, 1).col(0), s2 = 5.0 * s.normal_matrix(2, 1).col(0);
      const Vector z1 = 5.0 * s.normal_matrix(2, 1).col(0), z2 = 5.0 * s.normal_matrix(2, 1).col(0);
      const double num = (eval_generator(gen, s1, z1, t) - eval_generator(gen, s2, z2, t)).norm();
      worst = std::max(worst, num / ((s1 - s2).norm() + (z1 - z2).norm()));
    }
    EXPECT_LE(worst, bound + 1e-9) << gen.describe();
  }
}

TEST(Basis, Monomials) {
  BasisConfig cfg{2, 0.0};
  EXPECT_EQ(basis_features(vec({3.0}), cfg), vec({1.0, 3.0, 9.0}));
}

TEST(Basis, AffineIn2d) {
  BasisConfig cfg{1, 0.0};
  EXPECT_EQ(basis_features(vec({0.5, -2.0}), cfg), vec({1.0, 0.5, -2.0}));
}

TEST(Basis, ConstantOnly) {
  BasisConfig cfg{0, 0.0};
  EXPECT_EQ(basis_features(vec({42.0}), cfg), vec({1.0}));
}

TEST(Basis, FeatureCountIsBinomial) {
  EXPECT_EQ(feature_count(1, 2), 3);
  EXPECT_EQ(feature_count(2, 2), 6);
  EXPECT_EQ(feature_count(3, 3), 20);
  for (Index d = 1; d <= 4; ++d)
    for (Index p = 0; p <= 4; ++p)
      EXPECT_EQ(basis_features(Vector::Constant(d, 1.1), {p, 0.0}).size(), feature_count(d, p));
}

TEST(Basis, QuadraticIn2dContainsCrossTerm) {
  const Vector f = basis_features(vec({2.0, 3.0}), {2, 0.0});
  EXPECT_EQ(f(0), 1.0);
  EXPECT_EQ(f.segment(1, 2), vec({2.0, 3.0}));
  std::vector<double> quad(f.data() + 3, f.data() + 6);
  std::sort(quad.begin(), quad.end());
  EXPECT_EQ(quad, (std::vector<double>{4.0, 6.0, 9.0}));
}

TEST(LeastSquares, InterpolatesSpanExactly) {
  auto s = rng::Stream::keyed(1, rng::Tag::Probe);
  const Matrix x = s.normal_matrix(20, 3);
  const Matrix alpha = s.normal_matrix(3, 2);
  const auto fit = least_squares_fit(x, x * alpha, 0.0);
  EXPECT_LE((fit.coefficients - alpha).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(fit.residual_rms, 1e-12);
}

TEST(LeastSquares, ConstantBasisGivesMean) {
  const Matrix x = Matrix::Ones(5, 1);
  Matrix y(5, 1);
  y << 2.5, 2.5, 2.5, 2.5, 2.5;
  EXPECT_NEAR(least_squares_fit(x, y, 0.0).coefficients(0, 0), 2.5, 1e-15);
  y << 1, 2, 3, 4, 5;
  EXPECT_NEAR(least_squares_fit(x, y, 0.0).coefficients(0, 0), 3.0, 1e-15);
}

TEST(LeastSquares, MatchesPseudoInverse) {
  auto s = rng::Stream::keyed(2, rng::Tag::Probe);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = s.normal_matrix(50, 6);
    const Matrix y = s.normal_matrix(50, 2);
    const Matrix oracle = Eigen::CompleteOrthogonalDecomposition<Matrix>(x).pseudoInverse() * y;
    EXPECT_LE((least_squares_fit(x, y, 0.0).coefficients - oracle).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(LeastSquares, RidgeMatchesRegularizedOracle) {
  auto s = rng::Stream::keyed(3, rng::Tag::Probe);
  const Matrix x = s.normal_matrix(30, 4);
  const Matrix y = s.normal_matrix(30, 1);
  // Augmented system [X; sqrt(r) I] alpha = [y; 0] solved by QR.
  const double r = 0.7;
  Matrix xa(34, 4);
  xa << x, std::sqrt(r) * Matrix::Identity(4, 4);
  Matrix ya = Matrix::Zero(34, 1);
  ya.topRows(30) = y;
  const Matrix oracle = xa.householderQr().solve(ya);
  EXPECT_LE((least_squares_fit(x, y, r).coefficients - oracle).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LeastSquares, Errors) {
  EXPECT_THROW(least_squares_fit(Matrix::Ones(2, 3), Matrix::Ones(2, 1), 0.0), UnderdeterminedRegression);
  Matrix bad = Matrix::Ones(4, 1);
  bad(2, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(least_squares_fit(Matrix::Ones(4, 1), bad, 0.0), InvalidArgument);
  EXPECT_THROW(least_squares_fit(Matrix::Ones(4, 1), Matrix::Ones(3, 1), 0.0), InvalidArgument);
}

TEST(RegressionMc, ConstantMartingale) {
  const TimeGrid g(1.0, 32);
  const auto ens = sample_wiener_ensemble(g, 4096, 1, 7);
  const auto sol = solve_regression_mc(kZero1, GeneratorFn::null(), TerminalCondition::constant(vec({1.5})), g, ens);
  EXPECT_NEAR(sol.y0(0), 1.5, 1e-6);
  EXPECT_LE(max_fitted_z(sol, ens), 1e-6);
  for (std::size_t k = 1; k < sol.z_coeffs.size(); ++k) {
    EXPECT_LE(sol.z_coeffs[k].cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_EQ(sol.z_coeffs[k].rows(), 3);
    EXPECT_EQ(sol.z_coeffs[k].cols(), 1);
    EXPECT_LE(sol.diagnostics.z_residual[k], 1e-6);
    EXPECT_LE(sol.diagnostics.y_residual[k], 1e-6);
  }
  EXPECT_EQ(sol.diagnostics.generator_sq_mean, 0.0);
}

TEST(RegressionMc, LinearClosedForm) {
  // Y_t = c + kappa (T - t), Z = 0.
  const TimeGrid g(1.0, 32);
  const auto ens = sample_wiener_ensemble(g, 4096, 1, 8);
  for (double kappa : {0.7, -1.3}) {
    const auto sol = solve_regression_mc(kZero1, GeneratorFn::constant(kappa), TerminalCondition::constant(vec({1.5})), g, ens);
    EXPECT_NEAR(sol.y0(0), 1.5 + kappa, 1e-4);
    EXPECT_NEAR(sol.diagnostics.generator_sq_mean, kappa * kappa, 1e-12);
    // Intermediate levels follow the closed form on the constant coefficient.
    for (Index k = 1; k < 32; ++k) EXPECT_NEAR(sol.y_coeffs[k](0, 0), 1.5 + kappa * (1.0 - g.node(k)), 1e-4);
  }
}

TEST(RegressionMc, LinearInYViaScore) {
  // f = a s with s(y) = -y makes the BSDE a linear ODE, Y_t = xi exp(-a (T - t)).
  struct NegIdentity {
    Index dim() const { return 1; }
    Matrix score(const Matrix& x, double) const { return -x; }
    Matrix score_vjp(const Matrix&, double, const Matrix& g) const { return -g; }
  };
  const TimeGrid g(1.0, 200);
  const auto ens = sample_wiener_ensemble(g, 256, 1, 9);
  const double a = 0.8;
  const auto sol = solve_regression_mc(NegIdentity{}, GeneratorFn::linear(a, 0.0), TerminalCondition::constant(vec({2.0})), g, ens,
                                       {2, 0.0});
  // Explicit backward Euler of y' = a y: y_k = y_{k+1} (1 - a dt).
  const double discrete = 2.0 * std::pow(1.0 - a * g.dt(), 200);
  EXPECT_NEAR(sol.y0(0), discrete, 1e-9);
  EXPECT_NEAR(sol.y0(0), 2.0 * std::exp(-a), 5e-3);
}

TEST(RegressionMc, BrownianTerminalOracle) {
  const TimeGrid g(1.0, 20);
  const Index M = 4096;
  const auto ens = sample_wiener_ensemble(g, M, 1, 10);
  const auto sol = solve_regression_mc(kZero1, GeneratorFn::null(), TerminalCondition::brownian(1), g, ens);
  EXPECT_LE(std::abs(sol.y0(0)), 3.0 * std::sqrt(1.0 / M));
  double zmean = 0.0;
  for (Index k = 1; k < 20; ++k) zmean += sol.z_at(k, ens.positions_at(k), Matrix()).mean();
  EXPECT_NEAR(zmean / 19.0, 1.0, 0.05);
}

TEST(RegressionMc, TwoDimensionalDiagonal) {
  const TimeGrid g(1.0, 10);
  const auto ens = sample_wiener_ensemble(g, 4096, 2, 11);
  const ZeroScore zero2(2);
  const auto c = solve_regression_mc(zero2, GeneratorFn::constant(0.25), TerminalCondition::constant(vec({1.0, -2.0})), g, ens);
  EXPECT_NEAR(c.y0(0), 1.25, 1e-4);
  EXPECT_NEAR(c.y0(1), -1.75, 1e-4);
  EXPECT_EQ(c.z_coeffs[3].rows(), 6);
  EXPECT_EQ(c.z_coeffs[3].cols(), 2);
  const auto b = solve_regression_mc(zero2, GeneratorFn::null(), TerminalCondition::brownian(2), g, ens);
  Vector zmean = Vector::Zero(2);
  for (Index k = 1; k < 10; ++k) zmean += b.z_at(k, ens.positions_at(k), Matrix()).rowwise().mean();
  zmean /= 9.0;
  EXPECT_NEAR(zmean(0), 1.0, 0.05);
  EXPECT_NEAR(zmean(1), 1.0, 0.05);
}

TEST(RegressionMc, SingleStepGrid) {
  const TimeGrid g(1.0, 1);
  const auto ens = sample_wiener_ensemble(g, 64, 1, 12);
  const auto sol = solve_regression_mc(kZero1, GeneratorFn::constant(0.5), TerminalCondition::constant(vec({1.0})), g, ens);
  EXPECT_NEAR(sol.y0(0), 1.5, 1e-12);
}

TEST(RegressionMc, Errors) {
  const TimeGrid g(1.0, 8);
  const auto ens = sample_wiener_ensemble(g, 8, 1, 1);
  const auto xi = TerminalCondition::constant(vec({1.0}));
  EXPECT_THROW(solve_regression_mc(kZero1, GeneratorFn::null(), xi, g, ens, {2, 1e-8}), UnderdeterminedRegression);
  EXPECT_NO_THROW(solve_regression_mc(kZero1, GeneratorFn::null(), xi, g, ens, {1, 1e-8}));
  EXPECT_THROW(solve_regression_mc(kZero1, GeneratorFn::null(), xi, TimeGrid(1.0, 4), ens), InvalidArgument);
  EXPECT_THROW(solve_regression_mc(ZeroScore(2), GeneratorFn::null(), xi, g, ens), InvalidArgument);
  const auto blowup = TerminalCondition::of_terminal_noise(
      1, [](const Vector& w) { return Vector::Constant(1, w(0) > 0 ? std::numeric_limits<double>::infinity() : 0.0); },
      "blowup");
  EXPECT_THROW(solve_regression_mc(kZero1, GeneratorFn::null(), blowup, g, ens, {1, 1e-8}), NumericalError);
}

TEST(RegressionMc, DeterministicForFixedEnsemble) {
  const TimeGrid g(1.0, 16);
  const auto ens = sample_wiener_ensemble(g, 512, 1, 13);
  const auto a = solve_regression_mc(kZero1, GeneratorFn::null(), TerminalCondition::brownian(1), g, ens);
  const auto b = solve_regression_mc(kZero1, GeneratorFn::null(), TerminalCondition::brownian(1), g, ens);
  EXPECT_EQ(a.y0, b.y0);
  for (std::size_t k = 1; k < a.z_coeffs.size(); ++k) EXPECT_EQ(a.z_coeffs[k], b.z_coeffs[k]);
}

TEST(RegressionMc, IndependentEnsemblesConverge) {
  // Y0 from two independent ensembles differs by O(M^-1/2): quadrupling M should
  // halve the gap. A single pair is too noisy, so compare RMS gaps over 8 pairs.
  const TimeGrid g(1.0, 10);
  auto rms_gap = [&](Index M) {
    double sum = 0.0;
    for (std::uint64_t p = 0; p < 8; ++p) {
      const auto e1 = sample_wiener_ensemble(g, M, 1, 1000 + 2 * p);
      const auto e2 = sample_wiener_ensemble(g, M, 1, 1001 + 2 * p);
      const double y1 = solve_regression_mc(kZero1, GeneratorFn::null(), TerminalCondition::brownian(1), g, e1).y0(0);
      const double y2 = solve_regression_mc(kZero1, GeneratorFn::null(), TerminalCondition::brownian(1), g, e2).y0(0);
      sum += (y1 - y2) * (y1 - y2);
    }
    return std::sqrt(sum / 8.0);
  };
  const double small = rms_gap(1 << 13);
  const double large = rms_gap(1 << 15);
  EXPECT_LE(large, 0.75 * small) << small << " " << large;
}

TEST(Shooting, ConstantSolution) {
  const TimeGrid g(1.0, 16);
  const auto ens = sample_wiener_ensemble(g, 512, 1, 14);
  ShootingConfig cfg;
  cfg.iterations = 50;
  const Vector start = vec({0.0});
  const auto sol = solve_deep_shooting(kZero1, GeneratorFn::null(), TerminalCondition::constant(vec({1.5})), g, ens, cfg, &start);
  EXPECT_NEAR(sol.y0(0), 1.5, 0.05);
  EXPECT_LE(sol.diagnostics.final_loss, cfg.loss_threshold);
  EXPECT_TRUE(sol.diagnostics.converged);
  EXPECT_EQ(sol.diagnostics.loss_trace.size(), 50u);
}

TEST(Shooting, ZeroIterationsPassesThrough) {
  const TimeGrid g(1.0, 8);
  const auto ens = sample_wiener_ensemble(g, 128, 1, 15);
  ShootingConfig cfg;
  cfg.iterations = 0;
  const Vector start = vec({-1.0});
  const auto sol = solve_deep_shooting(kZero1, GeneratorFn::null(), TerminalCondition::constant(vec({2.0})), g, ens, cfg, &start);
  EXPECT_EQ(sol.y0(0), -1.0);
  EXPECT_TRUE(sol.diagnostics.loss_trace.empty());
  // Initial control is tiny, so the loss is about (y0 - xi)^2 = 9.
  EXPECT_NEAR(sol.diagnostics.final_loss, 9.0, 0.1);
  EXPECT_FALSE(sol.diagnostics.converged);
  const auto def = solve_deep_shooting(kZero1, GeneratorFn::null(), TerminalCondition::constant(vec({2.0})), g, ens, cfg);
  EXPECT_EQ(def.y0(0), 2.0);
}

TEST(Shooting, AgreesWithRegressionOnLinearProblem) {
  const TimeGrid g(1.0, 16);
  const auto ens = sample_wiener_ensemble(g, 1024, 1, 16);
  const auto xi = TerminalCondition::constant(vec({1.5}));
  const auto reg = solve_regression_mc(kZero1, GeneratorFn::constant(0.7), xi, g, ens);
  ShootingConfig cfg;
  cfg.iterations = 100;
  const auto sh = solve_deep_shooting(kZero1, GeneratorFn::constant(0.7), xi, g, ens, cfg);
  const double combined = std::sqrt(reg.y0_stderr(0) * reg.y0_stderr(0) + sh.y0_stderr(0) * sh.y0_stderr(0));
  EXPECT_LE(std::abs(reg.y0(0) - sh.y0(0)), std::max(3.0 * combined, 1e-9));
  EXPECT_NEAR(sh.y0(0), 2.2, 1e-3);
}

TEST(Shooting, RejectsFunctionTerminal) {
  const TimeGrid g(1.0, 4);
  const auto ens = sample_wiener_ensemble(g, 16, 1, 1);
  EXPECT_THROW(solve_deep_shooting(kZero1, GeneratorFn::null(), TerminalCondition::brownian(1), g, ens), InvalidArgument);
}

TEST(Shooting, ReplayUsesControlNetwork) {
  const TimeGrid g(1.0, 8);
  const auto ens = sample_wiener_ensemble(g, 256, 1, 17);
  ShootingConfig cfg;
  cfg.iterations = 30;
  const auto sol = solve_deep_shooting(kZero1, GeneratorFn::null(), TerminalCondition::constant(vec({0.5})), g, ens, cfg);
  const auto replay = forward_replay(sol, ens);
  const double loss = (replay.terminal().array() - 0.5).square().mean();
  EXPECT_NEAR(loss, sol.diagnostics.final_loss, 1e-12);
}

TEST(Replay, ConstantSolutionReplaysExactly) {
  const TimeGrid g(1.0, 32);
  const auto ens = sample_wiener_ensemble(g, 1024, 1, 18);
  const auto sol = solve_regression_mc(kZero1, GeneratorFn::null(), TerminalCondition::constant(vec({-0.75})), g, ens);
  const auto rp = forward_replay(sol, ens);
  EXPECT_LE((rp.terminal().array() + 0.75).abs().maxCoeff(), 1e-4);
}

TEST(Replay, BrownianOracleOnFreshPaths) {
  // Y_T - w_T = y0 + sum (z_k - 1) dw_k. The fitted z is noisiest in the tails of
  // w, so the per-path gap is not tiny, but it is centred and shrinks with M.
  const TimeGrid g(1.0, 20);
  const auto fresh = sample_wiener_ensemble(g, 2000, 1, 20);
  auto gap_for = [&](Index M) {
    const auto ens = sample_wiener_ensemble(g, M, 1, 19);
    const auto sol = solve_regression_mc(kZero1, GeneratorFn::null(), TerminalCondition::brownian(1), g, ens);
    return Matrix(forward_replay(sol, fresh).terminal() - fresh.positions_at(20));
  };
  const Matrix gap = gap_for(4096);
  const double sd = std::sqrt((gap.array() - gap.mean()).square().sum() / 1999.0);
  EXPECT_LE(std::abs(gap.mean()), 3.0 * sd / std::sqrt(2000.0) + 3.0 / std::sqrt(4096.0));
  const double rms = std::sqrt(gap.squaredNorm() / 2000.0);
  EXPECT_LE(rms, 0.25);
  EXPECT_LT(std::sqrt(gap_for(16384).squaredNorm() / 2000.0), 0.6 * rms);
}

TEST(Replay, ZeroNoiseIsDriftOnlyAndReproducible) {
  const TimeGrid g(1.0, 16);
  const auto ens = sample_wiener_ensemble(g, 1024, 1, 21);
  const auto sol = solve_regression_mc(kZero1, GeneratorFn::constant(0.4), TerminalCondition::constant(vec({1.0})), g, ens);
  const auto zeros = WienerEnsemble::zeros(g, 3, 1);
  const auto a = forward_replay(sol, zeros);
  const auto b = forward_replay(sol, zeros);
  for (std::size_t k = 0; k < a.states.size(); ++k) EXPECT_EQ(a.states[k], b.states[k]);
  EXPECT_NEAR(a.terminal()(0, 0), sol.y0(0) - 0.4, 1e-12);
}

TEST(Replay, LambdaZZeroDropsNoise) {
  const TimeGrid g(1.0, 10);
  const auto ens = sample_wiener_ensemble(g, 2048, 1, 22);
  const auto sol = solve_regression_mc(kZero1, GeneratorFn::null(), TerminalCondition::brownian(1), g, ens);
  ReplayOptions opts;
  opts.lambda_z = 0.0;
  const auto rp = forward_replay(sol, ens, opts);
  EXPECT_TRUE((rp.terminal().array() == sol.y0(0)).all());
}

TEST(Replay, Errors) {
  const TimeGrid g(1.0, 10);
  const auto ens = sample_wiener_ensemble(g, 64, 1, 23);
  const auto sol = solve_regression_mc(kZero1, GeneratorFn::null(), TerminalCondition::constant(vec({1.0})), g, ens);
  EXPECT_THROW(forward_replay(sol, sample_wiener_ensemble(TimeGrid(1.0, 5), 4, 1, 1)), InvalidArgument);
  ReplayOptions bad;
  bad.lambda_z = -1.0;
  EXPECT_THROW(forward_replay(sol, ens, bad), InvalidArgument);
  ReplayOptions shape;
  shape.start = Matrix::Zero(1, 3);
  EXPECT_THROW(forward_replay(sol, ens, shape), InvalidArgument);
}

TEST(Export, CsvAndSummary) {
  const TimeGrid g(1.0, 4);
  const auto ens = sample_wiener_ensemble(g, 64, 1, 24);
  const auto sol = solve_regression_mc(kZero1, GeneratorFn::constant(1.0), TerminalCondition::constant(vec({0.0})), g, ens);
  std::ostringstream csv;
  write_solution_csv(sol, csv);
  std::istringstream is(csv.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "step,t,coefficient,z,y");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 3 * 3);  // steps 1..3, three coefficients each

  std::ostringstream summary;
  write_solution_summary(sol, summary);
  auto kv = parse_summary(summary.str());
  EXPECT_EQ(kv["method"], "regression_mc");
  EXPECT_NEAR(std::stod(kv["y0_1"]), 1.0, 1e-9);
  EXPECT_EQ(kv["paths"], "64");
  EXPECT_EQ(kv["steps"], "4");
  EXPECT_EQ(kv["ensemble_seed"], "24");
  EXPECT_EQ(kv["config_hash"].size(), 16u);

  const auto other = solve_regression_mc(kZero1, GeneratorFn::constant(2.0), TerminalCondition::constant(vec({0.0})), g, ens);
  EXPECT_NE(solution_config_hash(sol), solution_config_hash(other));
  EXPECT_EQ(solution_config_hash(sol), solution_config_hash(sol));
}
