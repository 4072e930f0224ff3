#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <type_traits>

#include <gtest/gtest.h>

#include "bsdiff/pipeline.hpp"

using namespace bsdiff;

namespace {

const SdeSpec kSde = SdeSpec::variance_exploding();

// The d = 1 Gaussian model with its exact perturbed score standing in for a trained network.
AnalyticScore gaussian_model() { return AnalyticScore(AnalyticDistribution::gaussian(Vector::Constant(1, 1.0), 4.0), kSde); }

Vector vec1(double x) { return Vector::Constant(1, x); }

BsdeSolution brownian_solution(Index M = 4096) {
  const TimeGrid g(1.0, 16);
  const auto ens = sample_wiener_ensemble(g, M, 1, 77);
  return solve_regression_mc(ZeroScore(1), GeneratorFn::null(), TerminalCondition::brownian(1), g, ens);
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bsdiff_gen_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

// No public entry point of the generation layer takes a diffusion start time.
static_assert(std::is_same_v<decltype(&invert<AnalyticScore>),
                             BsdeSolution (*)(const Vector&, const AnalyticScore&, const GeneratorFn&, const TimeGrid&,
                                              const EnsembleConfig&)>);
static_assert(std::is_same_v<decltype(&joint_control), Matrix (*)(const BsdeSolution&, const ControlParams&)>);
static_assert(std::is_same_v<decltype(&neighborhood_sample), Matrix (*)(const BsdeSolution&, ControlParams)>);
static_assert(std::is_same_v<decltype(&girsanov_sample), Matrix (*)(const BsdeSolution&, ControlParams)>);
static_assert(std::is_aggregate_v<ControlParams> && std::is_aggregate_v<EnsembleConfig> && std::is_aggregate_v<UqConfig>);
template <class T>
concept HasStartTime = requires(T p) { p.t0; } || requires(T p) { p.start_time; };
static_assert(!HasStartTime<ControlParams> && !HasStartTime<EnsembleConfig> && !HasStartTime<UqConfig>);

TEST(Invert, NullGeneratorReturnsTarget) {
  EnsembleConfig ec;
  ec.paths = 2048;
  ec.seed = 1;
  const auto sol = invert(vec1(1.0), gaussian_model(), GeneratorFn::null(), TimeGrid(1.0, 32), ec);
  EXPECT_NEAR(sol.y0(0), 1.0, 1e-4);
}

TEST(Invert, RoundTripOnGaussianModel) {
  EnsembleConfig ec;
  ec.paths = 4096;
  ec.seed = 2;
  const TimeGrid g(1.0, 64);
  const auto sol = invert(vec1(3.0), gaussian_model(), GeneratorFn::diffusion_squared(kSde), g, ec);
  const auto ens = sample_wiener_ensemble(g, ec.paths, 1, ec.seed);
  const double mean = forward_replay(sol, ens).terminal().mean();
  EXPECT_LE(std::abs(mean - 3.0) / 3.0, 0.05);
  // The g^2 s term pulls towards the data mean, so the encoding sits far from xi.
  EXPECT_GT(std::abs(sol.y0(0) - 3.0), 0.1);
}

TEST(Invert, TwoSeedsAgreeWithinStandardErrors) {
  const TimeGrid g(1.0, 32);
  EnsembleConfig a, b;
  a.paths = b.paths = 4096;
  a.seed = 10;
  b.seed = 11;
  const auto gen = GeneratorFn::diffusion_squared(kSde);
  const auto sa = invert(vec1(2.0), gaussian_model(), gen, g, a);
  const auto sb = invert(vec1(2.0), gaussian_model(), gen, g, b);
  const double combined = std::hypot(sa.y0_stderr(0), sb.y0_stderr(0));
  EXPECT_GT(combined, 0.0);
  EXPECT_LE(std::abs(sa.y0(0) - sb.y0(0)), 3.0 * combined);
}

TEST(Control, NeutralSettingIsPlainReplay) {
  EnsembleConfig ec;
  ec.paths = 2048;
  const auto sol = invert(vec1(3.0), gaussian_model(), GeneratorFn::diffusion_squared(kSde), TimeGrid(1.0, 32), ec);
  ControlParams p;
  p.seed = 5;
  const Matrix joint = joint_control(sol, p);
  const Matrix plain = plain_replay(sol, p);
  EXPECT_EQ(joint, plain);
  // And plain_replay is forward_replay over the control noise.
  EXPECT_EQ(plain, forward_replay(sol, control_noise(sol, p)).terminal().transpose());
}

TEST(Control, CompositionIdentities) {
  const auto sol = brownian_solution();
  ControlParams p;
  p.seed = 6;
  p.lambda_y = 0.7;
  p.lambda_z = 1.0;
  EXPECT_EQ(joint_control(sol, p), neighborhood_sample(sol, p));
  p.lambda_y = 0.0;
  p.lambda_z = 1.8;
  EXPECT_EQ(joint_control(sol, p), girsanov_sample(sol, p));
}

TEST(Control, ZeroRadiusAndZeroNoiseIsDeterministicReplay) {
  EnsembleConfig ec;
  ec.paths = 2048;
  const TimeGrid g(1.0, 32);
  const auto sol = invert(vec1(3.0), gaussian_model(), GeneratorFn::diffusion_squared(kSde), g, ec);
  ControlParams p;
  p.samples = 10;
  p.zero_noise = true;
  const Matrix t = neighborhood_sample(sol, p);
  const double det = forward_replay(sol, WienerEnsemble::zeros(g, 1, 1)).terminal()(0, 0);
  EXPECT_TRUE((t.array() == det).all());
}

TEST(Control, ZeroGainIsDriftOnly) {
  const auto sol = brownian_solution();
  ControlParams p;
  p.lambda_z = 0.0;
  p.samples = 40;
  // Null generator: with no Z there is nothing left to move Y.
  EXPECT_TRUE((girsanov_sample(sol, p).array() == sol.y0(0)).all());
  p.zero_noise = true;
  p.lambda_z = 1.0;
  EXPECT_TRUE((girsanov_sample(sol, p).array() == sol.y0(0)).all());
}

TEST(Control, DispersionMonotoneInLambdaY) {
  EnsembleConfig ec;
  ec.paths = 4096;
  const auto sol = invert(vec1(3.0), gaussian_model(), GeneratorFn::diffusion_squared(kSde), TimeGrid(1.0, 32), ec);
  double prev = -1.0;
  for (double ly : {0.0, 0.1, 0.5, 1.0}) {
    ControlParams p;
    p.lambda_y = ly;
    p.seed = 9;
    const double sd = column_std(neighborhood_sample(sol, p))(0);
    EXPECT_GE(sd, prev) << ly;
    prev = sd;
  }
  EXPECT_GT(prev, 0.1);
}

TEST(Control, DispersionMonotoneInLambdaZ) {
  // Brownian terminal: Z ~ 1, so the gain scales the whole terminal spread.
  const auto sol = brownian_solution();
  std::vector<double> sds;
  for (double lz : {1.0, 1.5, 2.0}) {
    ControlParams p;
    p.lambda_z = lz;
    p.seed = 9;
    sds.push_back(column_std(girsanov_sample(sol, p))(0));
  }
  EXPECT_LE(sds[0], sds[1]);
  EXPECT_LE(sds[1], sds[2]);
  EXPECT_NEAR(sds[2] / sds[0], 2.0, 0.1);
}

TEST(Control, RejectsNegativeGains) {
  const auto sol = brownian_solution(256);
  ControlParams p;
  p.lambda_y = -0.1;
  EXPECT_THROW(joint_control(sol, p), InvalidArgument);
  p.lambda_y = 0.0;
  p.lambda_z = -1.0;
  EXPECT_THROW(joint_control(sol, p), InvalidArgument);
  p.lambda_z = 1.0;
  p.samples = 0;
  EXPECT_THROW(joint_control(sol, p), InvalidArgument);
}

TEST(Control, WorkerCountDoesNotChangeTerminals) {
  const auto sol = brownian_solution();
  ControlParams p;
  p.samples = 1300;
  p.lambda_y = 0.3;
  p.lambda_z = 1.4;
  p.seed = 3;
  p.workers = 1;
  const Matrix one = joint_control(sol, p);
  p.workers = 3;
  EXPECT_EQ(joint_control(sol, p), one);
}

TEST(Uq, DegenerateCertainty) {
  UqConfig uc;
  uc.repetitions = 4;
  uc.paths = 1024;
  const auto r = quantify_uncertainty(vec1(2.0), ZeroScore(1), GeneratorFn::null(), TimeGrid(1.0, 16), uc);
  EXPECT_TRUE(r.valid);
  EXPECT_LE(r.y0_std(0), 1e-4);
  EXPECT_NEAR(r.y0_mean(0), 2.0, 1e-6);
  EXPECT_EQ(r.seeds.size(), 4u);
}

TEST(Uq, BrownianSpreadMatchesMonteCarloError) {
  const TimeGrid g(1.0, 16);
  auto std_for = [&](Index M) {
    UqConfig uc;
    uc.repetitions = 16;
    uc.paths = M;
    uc.seed = 4;
    return quantify_uncertainty(TerminalCondition::brownian(1), ZeroScore(1), GeneratorFn::null(), g, uc).y0_std(0);
  };
  const double s1 = std_for(2048);
  const double s2 = std_for(4096);
  const double analytic = std::sqrt(1.0 / 2048.0);
  EXPECT_GE(s1, 0.5 * analytic);
  EXPECT_LE(s1, 2.0 * analytic);
  // Doubling M divides the spread by sqrt(2); accept a factor-of-2 band around that.
  const double ratio = s1 / s2;
  EXPECT_GE(ratio, std::sqrt(2.0) / 2.0);
  EXPECT_LE(ratio, std::sqrt(2.0) * 2.0);
}

TEST(Uq, AgreesWithDirectCrossEnsembleSpread) {
  const TimeGrid g(1.0, 12);
  UqConfig uc;
  uc.repetitions = 6;
  uc.paths = 1024;
  uc.seed = 8;
  const auto report = quantify_uncertainty(TerminalCondition::brownian(1), ZeroScore(1), GeneratorFn::null(), g, uc);
  Matrix direct(6, 1);
  for (Index r = 0; r < 6; ++r) {
    const auto ens = sample_wiener_ensemble(g, 1024, 1, uq_repetition_seed(8, r));
    direct(r, 0) = solve_regression_mc(ZeroScore(1), GeneratorFn::null(), TerminalCondition::brownian(1), g, ens).y0(0);
  }
  EXPECT_EQ(report.y0, direct);
  EXPECT_EQ(report.y0_std, column_std(direct));
}

TEST(Uq, WorkerCountDoesNotChangeReport) {
  const TimeGrid g(1.0, 8);
  UqConfig uc;
  uc.repetitions = 5;
  uc.paths = 600;
  uc.workers = 1;
  const auto a = quantify_uncertainty(TerminalCondition::brownian(1), ZeroScore(1), GeneratorFn::null(), g, uc);
  uc.workers = 4;
  const auto b = quantify_uncertainty(TerminalCondition::brownian(1), ZeroScore(1), GeneratorFn::null(), g, uc);
  EXPECT_EQ(a.y0, b.y0);
  EXPECT_EQ(a.terminal, b.terminal);
}

TEST(Uq, FailedRepetitionFlagsReport) {
  UqConfig uc;
  uc.repetitions = 3;
  uc.paths = 4;  // fewer than 4 x 3 features
  const auto r = quantify_uncertainty(vec1(1.0), ZeroScore(1), GeneratorFn::null(), TimeGrid(1.0, 4), uc);
  EXPECT_FALSE(r.valid);
  EXPECT_NE(r.message.find("repetition 0"), std::string::npos);
}

TEST(Uq, NeedsTwoRepetitions) {
  UqConfig uc;
  uc.repetitions = 1;
  EXPECT_THROW(quantify_uncertainty(vec1(1.0), ZeroScore(1), GeneratorFn::null(), TimeGrid(1.0, 4), uc), InvalidArgument);
}

TEST(Uq, ReportAndCsvLayout) {
  UqConfig uc;
  uc.repetitions = 3;
  uc.paths = 256;
  const auto r = quantify_uncertainty(vec1(1.0), ZeroScore(1), GeneratorFn::null(), TimeGrid(1.0, 4), uc);
  std::ostringstream rep, csv;
  write_uq_report(r, rep);
  write_uq_csv(r, csv);
  EXPECT_NE(rep.str().find("repetitions=3\nvalid=1\n"), std::string::npos);
  const std::string text = csv.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "repetition,seed,y0_1,terminal_1");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
}

TEST(ColumnStd, Examples) {
  Matrix m(4, 2);
  m << 1, 5, 2, 5, 3, 5, 4, 5;
  const Vector s = column_std(m);
  EXPECT_NEAR(s(0), std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(s(1), 0.0);
  EXPECT_EQ(column_std(Matrix::Ones(1, 3)), Vector::Zero(3));
}

TEST(Config, ParsesAndRejectsUnknownKeys) {
  const auto c = FlatConfig::parse_string("# comment\nsteps = 16\nxi = 2.5\nlambda_y = 0, 0.25 ,1\nbogus = 1\n");
  const auto p = pipeline_config_from(c);
  EXPECT_EQ(p.steps, 16);
  EXPECT_EQ(p.target_point(0), 2.5);
  EXPECT_EQ(p.lambda_y, (std::vector<double>{0.0, 0.25, 1.0}));
  EXPECT_THROW(c.reject_unused(), InvalidArgument);
  const auto clean = FlatConfig::parse_string("steps = 16\n");
  pipeline_config_from(clean);
  EXPECT_NO_THROW(clean.reject_unused());
}

TEST(Config, Errors) {
  EXPECT_THROW(FlatConfig::parse_string("a = 1\na = 2\n"), InvalidArgument);
  EXPECT_THROW(FlatConfig::parse_string("no equals sign\n"), InvalidArgument);
  EXPECT_THROW(pipeline_config_from(FlatConfig::parse_string("steps = 1.5\n")), InvalidArgument);
  EXPECT_THROW(pipeline_config_from(FlatConfig::parse_string("xi = nan\n")), InvalidArgument);
  EXPECT_THROW(pipeline_config_from(FlatConfig::parse_string("target = cauchy\n")), InvalidArgument);
  EXPECT_THROW(model_config_from(FlatConfig::parse_string("spectral_norm = maybe\n")), InvalidArgument);
  GeneratorSpec g;
  g.kind = "quadratic";
  EXPECT_THROW(g.make(kSde), InvalidArgument);
}

TEST(Config, HashIgnoresLayout) {
  const auto a = FlatConfig::parse_string("x = 1\ny = 2\n");
  const auto b = FlatConfig::parse_string("# header\ny=2\n\n   x   =   1   \n");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), FlatConfig::parse_string("x = 1\ny = 3\n").hash());
}

TEST(Pipeline, NullGeneratorDemosPass) {
  PipelineConfig cfg;
  cfg.generator.kind = "null";
  cfg.steps = 16;
  cfg.paths = 1024;
  cfg.samples = 64;
  cfg.repetitions = 3;
  cfg.uq_paths = 512;
  const auto out = scratch("null");
  const auto inv = run_pipeline_demo(PipelineTask::Inversion, cfg, out);
  EXPECT_TRUE(inv.passed);
  const auto uq = run_pipeline_demo(PipelineTask::Uq, cfg, out);
  EXPECT_TRUE(uq.passed);
  EXPECT_NE(std::find(uq.summary.begin(), uq.summary.end(), "check_degenerate_certainty=pass"), uq.summary.end());
  // Constant terminal: every lambda_z gives the same (zero) spread up to rounding.
  const auto ctl = run_pipeline_demo(PipelineTask::Control, cfg, out);
  EXPECT_TRUE(ctl.passed);
  for (const auto& f : {"solution.csv", "solution_summary.txt", "replay_paths.csv", "inversion.svg", "uq_report.txt",
                        "uq_repetitions.csv", "uq.svg", "dispersion.csv", "control.svg", "terminals_ly0_lz1.csv",
                        "terminals_ly0.5_lz2.csv"})
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  EXPECT_EQ(slurp(out / "dispersion.csv").substr(0, 32), "lambda_y,lambda_z,mean_1,std_1\n0");
  EXPECT_EQ(slurp(out / "inversion.svg").rfind("<svg", 0), 0u);
  std::filesystem::remove_all(out);
}

TEST(Pipeline, TrainedModelInversion) {
  PipelineConfig cfg;
  cfg.model.train.steps = 400;
  cfg.model.train.batch_size = 256;
  cfg.model.network.width = 32;
  cfg.steps = 32;
  cfg.paths = 2048;
  cfg.roundtrip_tolerance = 0.1;
  const auto out = scratch("trained");
  const auto res = run_pipeline_demo(PipelineTask::Inversion, cfg, out);
  EXPECT_TRUE(res.passed);
  bool has_validation = false;
  for (const auto& line : res.summary) has_validation |= line.rfind("model_validation_max_error=", 0) == 0;
  EXPECT_TRUE(has_validation);
  std::filesystem::remove_all(out);
}

TEST(Pipeline, RejectsMismatchedTargetPoint) {
  PipelineConfig cfg;
  cfg.generator.kind = "null";
  cfg.target_point = Vector::Zero(2);
  EXPECT_THROW(run_pipeline_demo(PipelineTask::Inversion, cfg, scratch("bad")), InvalidArgument);
}

TEST(Pipeline, ValidatesBeforeTraining) {
  PipelineConfig cfg;
  cfg.repetitions = 1;
  EXPECT_THROW(run_pipeline_demo(PipelineTask::Uq, cfg, scratch("reps")), InvalidArgument);
  cfg.repetitions = 4;
  cfg.lambda_z = {1.0, -2.0};
  EXPECT_THROW(run_pipeline_demo(PipelineTask::Control, cfg, scratch("lz")), InvalidArgument);
  cfg.lambda_z = {1.0};
  cfg.uq_terminal = "poisson";
  EXPECT_THROW(run_pipeline_demo(PipelineTask::Uq, cfg, scratch("term")), InvalidArgument);
}
