#include <gtest/gtest.h>

#include <qdt/analysis.hpp>
#include <qdt/detectors.hpp>
#include <qdt/solver.hpp>

using namespace qdt;

namespace {

void expect_feasible(const FockDiagonalPOVM& p) {
  EXPECT_GE(p.coeffs().minCoeff(), -1e-9);
  for (int k = 0; k <= p.truncation(); ++k) EXPECT_NEAR(p.coeffs().row(k).sum(), 1.0, 1e-6);
}

struct Fixture {
  ProbeEnsemble probes = ProbeEnsemble::linear(0.0, 30.0, 60, ProbeKind::pure);
  ResponseMatrix f = build_response(probes, 60);
  StatisticsMatrix data(const FockDiagonalPOVM& truth) const { return predict_statistics(truth, f); }
};

} // namespace

TEST(Penalties, Smoothing) {
  EXPECT_EQ(smoothing_penalty(Matrix::Constant(10, 3, 1.0 / 3)), 0.0);
  EXPECT_DOUBLE_EQ(smoothing_penalty(perfect_number_povm(9, 8)), 16.0);
  Matrix e7 = Matrix::Zero(61, 1);
  e7(7, 0) = 1.0;
  EXPECT_DOUBLE_EQ(smoothing_penalty(e7), 2.0);
}

TEST(Penalties, Damping) {
  EXPECT_EQ(damping_penalty(Matrix::Zero(5, 2), 0.03), 0.0);
  Matrix t = Matrix::Zero(5, 2);
  t(2, 0) = 1.0;
  EXPECT_DOUBLE_EQ(damping_penalty(t, 0.03), 0.25 * 0.03);
  Matrix v = Matrix::Zero(5, 2);
  v.row(0).setConstant(0.5);
  EXPECT_EQ(damping_penalty(v, 0.03), 0.0);
}

TEST(Reconstruct, PerfectCounterIsExactWithoutNoise) {
  Fixture fx;
  const auto truth = povm_zoo(ZooCase::perfect_number);
  const auto rep = reconstruct(fx.data(truth), fx.f, SolverConfig::unregularized());
  EXPECT_TRUE(rep.converged);
  EXPECT_LE(rep.kkt_residual, 1e-6);
  EXPECT_LT((rep.povm.coeffs() - truth.coeffs()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Reconstruct, OptimalityCertificateOnNoiselessData) {
  Fixture fx;
  for (auto c : kAllZooCases) {
    const auto truth = povm_zoo(c);
    const auto p = fx.data(truth);
    const auto rep = reconstruct(p, fx.f, SolverConfig::unregularized());
    const double truth_obj = (p.probs - fx.f.entries * truth.coeffs()).squaredNorm();
    EXPECT_LE(rep.objective, truth_obj + 1e-8) << to_string(c);
    expect_feasible(rep.povm);
  }
}

TEST(Reconstruct, ConvergedImpliesCertificate) {
  Fixture fx;
  const auto p = sample_statistics(fx.data(povm_zoo(ZooCase::lossy_tmd_52)), 38084, 3);
  for (double y : {0.01, 0.1, 1.0}) {
    const auto rep = reconstruct(p, fx.f, SolverConfig::smoothing(y));
    ASSERT_TRUE(rep.converged) << y;
    EXPECT_LE(rep.kkt_residual, 1e-6);
    expect_feasible(rep.povm);
    // the penalty value reported is y S
    EXPECT_NEAR(rep.penalty, y * smoothing_penalty(rep.povm), 1e-12 * std::max(1.0, rep.penalty));
  }
}

TEST(Reconstruct, ResidualHistoryMonotoneAfterWarmup) {
  Fixture fx;
  const auto p = sample_statistics(fx.data(povm_zoo(ZooCase::lossy_tmd_52)), 38084, 3);
  for (double y : {0.0, 0.1}) {
    SolverConfig cfg = y > 0 ? SolverConfig::smoothing(y) : SolverConfig::unregularized();
    cfg.max_iterations = 5000;
    const auto rep = reconstruct(p, fx.f, cfg);
    const auto& h = rep.residual_history;
    for (std::size_t i = 101; i < h.size(); ++i)
      ASSERT_LE(h[i], h[i - 1] * (1.0 + 1e-12) + 1e-15) << "y=" << y << " iteration " << i + 1;
  }
}

TEST(Reconstruct, FeasibleUnderEveryRegularizer) {
  Fixture fx;
  const auto p = sample_statistics(fx.data(povm_zoo(ZooCase::sharp_artificial_loss_20)), 38084, 5);
  std::vector<SolverConfig> cfgs;
  for (double y : {0.0, 0.001, 0.1, 10.0}) cfgs.push_back(y > 0 ? SolverConfig::smoothing(y) : SolverConfig::unregularized());
  SolverConfig damp;
  damp.regularizer = Regularizer::damping;
  for (double c : {0.03, 3.0}) {
    damp.damping_c = c;
    cfgs.push_back(damp);
  }
  SolverConfig w;
  w.regularizer = Regularizer::weighting;
  w.weights = {1, 1, 1, 1, 2, 2, 3, 3, 5};
  cfgs.push_back(w);
  for (auto cfg : cfgs) {
    cfg.max_iterations = 4000;
    const auto rep = reconstruct(p, fx.f, cfg);
    expect_feasible(rep.povm);
  }
}

TEST(Reconstruct, InputValidation) {
  Fixture fx;
  auto p = fx.data(povm_zoo(ZooCase::lossless_tmd));
  p.probs(3, 2) = 1.5;
  EXPECT_THROW(reconstruct(p, fx.f), InfeasibleInput);
  p.probs(3, 2) = -1e-3;
  EXPECT_THROW(reconstruct(p, fx.f), InfeasibleInput);
  StatisticsMatrix short_p{Matrix::Constant(10, 9, 1.0 / 9), {}};
  EXPECT_THROW(reconstruct(short_p, fx.f), DimensionMismatch);
  SolverConfig bad;
  bad.y = -1;
  EXPECT_THROW(reconstruct(fx.data(povm_zoo(ZooCase::lossless_tmd)), fx.f, bad), ValidationError);
}

TEST(Reconstruct, NoDarkCountsFromLossyData) {
  Fixture fx;
  for (double eta : {0.2, kLossyTmdEfficiency, 0.9}) {
    const auto truth = lossy_tmd_povm(SplitterTree::measured_8bin(), eta, 60);
    const auto rep = reconstruct(fx.data(truth), fx.f, SolverConfig::unregularized());
    for (int n = 1; n < 9; ++n)
      for (int k = 0; k < n; ++k) EXPECT_LT(rep.povm(k, n), 1e-3) << "eta " << eta << " k=" << k << " n=" << n;
  }
}

TEST(Weighted, IdentityAndScaleInvariance) {
  Fixture fx;
  const auto p = fx.data(povm_zoo(ZooCase::perfect_number));
  const auto base = reconstruct(p, fx.f, SolverConfig::unregularized());
  const auto same = weighted_reconstruct(p, fx.f, Vector::Ones(9), SolverConfig::unregularized());
  const auto twice = weighted_reconstruct(p, fx.f, Vector::Constant(9, 2.0), SolverConfig::unregularized());
  EXPECT_LT((base.povm.coeffs() - same.povm.coeffs()).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((base.povm.coeffs() - twice.povm.coeffs()).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_THROW(weighted_reconstruct(p, fx.f, Vector::Zero(9)), ValidationError);
  EXPECT_THROW(weighted_reconstruct(p, fx.f, Vector::Ones(4)), DimensionMismatch);
}

TEST(Weighted, EmphasizedColumnsFitBetter) {
  Fixture fx;
  const auto p = sample_statistics(fx.data(povm_zoo(ZooCase::lossy_tmd_52)), 38084, 8);
  const auto plain = reconstruct(p, fx.f, SolverConfig::smoothing(0.1));
  Vector w = Vector::Ones(9);
  w.tail(3).setConstant(4.0);
  const auto heavy = weighted_reconstruct(p, fx.f, w, SolverConfig::smoothing(0.1));
  auto tail_residual = [&](const ReconstructionReport& r) {
    return (p.probs - fx.f.entries * r.povm.coeffs()).rightCols(3).norm();
  };
  EXPECT_LE(tail_residual(heavy), tail_residual(plain) + 1e-12);
}

TEST(NoiseAverage, ZeroNoiseEqualsSingleRun) {
  Fixture fx;
  const auto p = sample_statistics(fx.data(povm_zoo(ZooCase::lossy_tmd_52)), 38084, 2);
  SolverConfig cfg = SolverConfig::smoothing(0.1);
  cfg.noise_runs = 3;
  cfg.noise_sigma_rel = 0.0;
  const auto avg = noise_average_reconstruct(p, fx.probes, cfg);
  const auto single = reconstruct(p, fx.f, SolverConfig::smoothing(0.1));
  EXPECT_EQ(avg.runs.size(), 3u);
  EXPECT_EQ(avg.failed_runs, 0);
  EXPECT_LT((avg.povm.coeffs() - single.povm.coeffs()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(NoiseAverage, DeterministicAcrossThreadCounts) {
  Fixture fx;
  const auto p = sample_statistics(fx.data(povm_zoo(ZooCase::lossless_tmd)), 38084, 2);
  SolverConfig cfg = SolverConfig::smoothing(0.1);
  cfg.noise_runs = 4;
  cfg.noise_sigma_rel = 0.01;
  cfg.seed = 42;
  const auto a = noise_average_reconstruct(p, fx.probes, cfg);
  cfg.jobs = 3;
  const auto b = noise_average_reconstruct(p, fx.probes, cfg);
  EXPECT_EQ(a.povm.coeffs(), b.povm.coeffs());
  expect_feasible(a.povm);
  cfg.noise_runs = 1;
  EXPECT_THROW(noise_average_reconstruct(p, fx.probes, cfg), ValidationError);
}
