#include <cmath>

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include <cgbound/gaussref.hpp>
#include <cgbound/integrators.hpp>

using namespace cgbound;

namespace {

// Van Loan: exp([[M, Q], [0, -M^T]] t) gives the transition e^{-Mt} and the accumulated noise covariance.
GaussianLaw expm_law(const Mat& M, const Mat& Q, const Vec& m0, const Mat& S0, double t) {
  const long n = M.rows();
  Mat C = Mat::Zero(2 * n, 2 * n);
  C.topLeftCorner(n, n) = M;
  C.topRightCorner(n, n) = Q;
  C.bottomRightCorner(n, n) = -M.transpose();
  const Mat E = Mat(C * t).exp();
  const Mat Phi = E.bottomRightCorner(n, n).transpose();
  const Mat noise = Phi * E.topRightCorner(n, n);
  return {t, Phi * m0, Phi * S0 * Phi.transpose() + 0.5 * (noise + noise.transpose())};
}

Mat K_coupled(double eps, double c) {
  Mat K(2, 2);
  K << 1, c, c, 1 / eps;
  return K;
}

Mat diag(std::initializer_list<double> v) {
  Vec d(long(v.size()));
  long i = 0;
  for (double x : v) d(i++) = x;
  return d.asDiagonal();
}

}  // namespace

TEST(Moments, ScalarOrnsteinUhlenbeck) {
  LinearSde ou(Mat::Identity(1, 1), Mat::Constant(1, 1, 2.0));
  auto laws = propagate_moments(ou, Vec::Constant(1, 2.0), Mat::Zero(1, 1), {0.0, 0.5, 1.0});
  ASSERT_EQ(laws.size(), 3u);
  EXPECT_NEAR(laws[2].S(0, 0), 1 - std::exp(-2.0), 1e-10);
  EXPECT_NEAR(laws[2].S(0, 0), 0.864665, 1e-6);
  EXPECT_NEAR(laws[1].m(0), 2 * std::exp(-0.5), 1e-10);
  EXPECT_EQ(laws[0].S(0, 0), 0.0);
}

TEST(Moments, MatchesMatrixExponential) {
  const double beta = 1.5, gamma = 0.7;
  auto sys = langevin_system(K_coupled(0.2, 0.5), beta, gamma);
  Vec m0(4);
  m0 << 1, 0.5, -0.3, 0.2;
  Mat S0 = diag({0.1, 0.05, 0.2, 0.1});
  S0(0, 1) = S0(1, 0) = 0.02;
  auto laws = propagate_moments(sys, m0, S0, {0.3, 1.0, 2.5});
  for (const auto& law : laws) {
    auto ref = expm_law(sys.M, sys.Q, m0, S0, law.t);
    EXPECT_LE((law.m - ref.m).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((law.S - ref.S).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Stationary, LangevinUnitQuadraticIsIdentity) {
  auto sys = langevin_system(Mat::Identity(1, 1), 1.0, 1.0);
  Mat M(2, 2);
  M << 0, -1, 1, 1;
  EXPECT_TRUE(sys.M == M);
  EXPECT_TRUE(sys.Q == diag({0, 2}));
  EXPECT_LE((stationary_covariance(sys) - Mat::Identity(2, 2)).norm(), 1e-12);
  auto laws = propagate_moments(sys, Vec::Zero(2), Mat::Identity(2, 2), {3.0});
  EXPECT_LE((laws[0].S - Mat::Identity(2, 2)).norm(), 1e-9);
}

TEST(Stationary, GibbsCovarianceForRandomQuadratics) {
  RandomStream rs(11, streams::constants, 0);
  for (int trial = 0; trial < 10; ++trial) {
    Mat B(2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) B(i, j) = rs.normal();
    const Mat K = B * B.transpose() + 0.3 * Mat::Identity(2, 2);
    const double beta = 0.5 + rs.uniform() * 2;
    auto sys = langevin_system(K, beta, 0.5 + rs.uniform());
    const Mat S = stationary_covariance(sys);
    // Lyapunov residual, independent of the Kronecker assembly
    EXPECT_LE((sys.M * S + S * sys.M.transpose() - sys.Q).norm(), 1e-10);
    EXPECT_LE((S - gibbs_law(K, beta, true).S).norm(), 1e-9);
    EXPECT_LE((stationary_covariance(overdamped_system(K, beta)) - gibbs_law(K, beta, false).S).norm(), 1e-10);
  }
}

TEST(Suite, CoarseLawIsMarginalOfFullLaw) {
  const double beta = 1.0, gamma = 1.0;
  auto pot = catalog::coupled_quadratic(0.1, 0.5);
  auto map = catalog::coordinate(2, 0);
  Vec m0(4);
  m0 << 1, 0.5, 0, 0;
  const Mat S0 = diag({0.1, 0.1, 0.1, 0.1});
  auto suite = langevin_reference_suite(pot, map, beta, gamma, m0, S0, {0.0, 0.5, 1.0});
  auto sys = langevin_system(*pot.quadratic, beta, gamma);
  for (const auto& pt : suite.points) {
    auto ref = expm_law(sys.M, sys.Q, m0, S0, pt.t);
    const double idx[2] = {0, 2};  // (q1, p1)
    for (int a = 0; a < 2; ++a) {
      EXPECT_NEAR(pt.coarse.m(a), ref.m(long(idx[a])), 1e-9);
      for (int b = 0; b < 2; ++b) EXPECT_NEAR(pt.coarse.S(a, b), ref.S(long(idx[a]), long(idx[b])), 1e-9);
    }
  }
  EXPECT_EQ(suite.points.front().H, 0.0);
  EXPECT_GT(suite.points.back().H, 0.0);
  // effective drift b(z) = (1 - c^2 eps) z
  EXPECT_NEAR(suite.B(0, 0), 1 - 0.25 * 0.1, 1e-12);
}

TEST(Suite, SeparableLawsCoincide) {
  auto pot = catalog::coupled_quadratic(0.1, 0.0);
  Vec m0(4);
  m0 << 1, 0.5, 0.2, -0.1;
  auto suite = langevin_reference_suite(pot, catalog::coordinate(2, 0), 1.0, 1.0, m0, diag({0.1, 0.05, 0.1, 0.2}),
                                        {0.0, 0.25, 0.5, 1.0});
  for (const auto& pt : suite.points) {
    EXPECT_LE(pt.H, 1e-10);
    EXPECT_LE(pt.W2, 1e-5);
  }
  auto od = overdamped_reference_suite(pot, catalog::coordinate(2, 0), 1.0, m0.head(2), diag({0.1, 0.05}), {0.5, 1.0});
  for (const auto& pt : od.points) EXPECT_LE(pt.H, 1e-10);
}

TEST(Suite, GapShrinksWithCoupling) {
  Vec m0(4);
  m0 << 1, 0.5, 0, 0;
  const Mat S0 = diag({0.1, 0.1, 0.1, 0.1});
  std::vector<double> tg;
  for (int i = 0; i <= 20; ++i) tg.push_back(0.05 * i);
  double prev = INFINITY;
  for (double c : {0.5, 0.25, 0.1}) {
    auto suite = langevin_reference_suite(catalog::coupled_quadratic(0.1, c), catalog::coordinate(2, 0), 1.0, 1.0, m0,
                                          S0, tg);
    double sup = 0.0;
    for (const auto& pt : suite.points) sup = std::max(sup, pt.H);
    EXPECT_GT(sup, 0.0);
    EXPECT_LT(sup, prev);
    prev = sup;
  }
}

TEST(Suite, ParticlesMatchOracleMoments) {
  const double beta = 1.0, gamma = 1.0;
  auto pot = catalog::coupled_quadratic(0.1, 0.5);
  Vec m0(4);
  m0 << 1, 0.5, 0, 0;
  // 4e4 particles put the 5% band at about 7 standard errors of a variance estimate
  const long n = 40000;
  RandomStream rs(3, streams::initial, 0);
  Mat q0(n, 2), p0(n, 2);
  for (long i = 0; i < n; ++i) {
    q0.row(i) << m0(0) + std::sqrt(0.1) * rs.normal(), m0(1) + std::sqrt(0.1) * rs.normal();
    p0.row(i) << std::sqrt(0.1) * rs.normal(), std::sqrt(0.1) * rs.normal();
  }
  // oracle from the empirical initial moments, so only the dynamics is under test
  Mat x0(n, 4);
  x0 << q0, p0;
  const Vec em = x0.colwise().mean().transpose();
  const Mat xc = x0.rowwise() - em.transpose();
  const Mat eS = xc.transpose() * xc / double(n);
  SdeConfig cfg;
  cfg.h = 0.005;
  cfg.beta = beta;
  cfg.gamma = gamma;
  RunOptions opt;
  opt.n_out = 4;
  auto sim = simulate_langevin(pot, cfg, q0, p0, opt);
  auto laws = propagate_moments(langevin_system(*pot.quadratic, beta, gamma), em, eS, sim.times);
  ASSERT_EQ(sim.mean.size(), laws.size());
  for (std::size_t k = 0; k < laws.size(); ++k) {
    // summaries track positions only
    for (long a = 0; a < sim.mean[k].size(); ++a) {
      const double sd = std::sqrt(laws[k].S(a, a));
      EXPECT_NEAR(sim.mean[k](a), laws[k].m(a), 0.05 * std::max(std::abs(laws[k].m(a)), sd)) << k << " " << a;
      EXPECT_NEAR(sim.var[k](a), laws[k].S(a, a), 0.05 * laws[k].S(a, a)) << k << " " << a;
    }
  }
}

TEST(CgClosure, StationaryLawGivesEffectiveClosure) {
  auto pot = catalog::coupled_quadratic(0.1, 0.5);
  for (auto map : {catalog::coordinate(2, 0), catalog::rotated(0.4)}) {
    auto cg = gaussian_cg_closure(pot, map, {gibbs_law(*pot.quadratic, 2.0, false)});
    auto eff = analytic_effective_closure(pot, map);
    ASSERT_TRUE(eff);
    for (double z : {-2.0, 0.0, 0.7, 3.0}) {
      const Vec zv = Vec::Constant(1, z);
      EXPECT_NEAR(cg.b(0.3, zv)(0), eff->b(0.3, zv)(0), 1e-12);
      EXPECT_NEAR(cg.A(0.3, zv)(0, 0), eff->A(0.3, zv)(0, 0), 1e-12);
    }
  }
}

TEST(CgClosure, InterpolatesBetweenLaws) {
  auto pot = catalog::coupled_quadratic(0.1, 0.5);
  auto map = catalog::coordinate(2, 0);
  GaussianLaw a{0.0, Vec::Zero(2), diag({1, 0.1})}, b{1.0, (Vec(2) << 0, 1).finished(), diag({1, 0.1})};
  auto cg = gaussian_cg_closure(pot, map, {a, b});
  // E[q | q1 = z] = (z, m2), so b_hat = z + c m2 at both ends
  const Vec z = Vec::Constant(1, 0.4);
  EXPECT_NEAR(cg.b(0.0, z)(0), 0.4, 1e-12);
  EXPECT_NEAR(cg.b(1.0, z)(0), 0.4 + 0.5, 1e-12);
  EXPECT_NEAR(cg.b(0.5, z)(0), 0.4 + 0.25, 1e-12);
}

TEST(Errors, UnstableSystems) {
  LinearSde grow(-Mat::Identity(1, 1), Mat::Constant(1, 1, 1.0));
  EXPECT_GT(spectral_abscissa(grow.M), 0.0);
  try {
    stationary_covariance(grow);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numerical);
  }
  LinearSde fast(-50 * Mat::Identity(1, 1), Mat::Constant(1, 1, 1.0));
  try {
    propagate_moments(fast, Vec::Ones(1), Mat::Identity(1, 1), {2.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numerical);
  }
  EXPECT_THROW(LinearSde(Mat::Identity(1, 1), Mat::Constant(1, 1, -1.0)), Error);
  EXPECT_THROW(langevin_reference_suite(catalog::double_well(0.1, 0.2), catalog::coordinate(2, 0), 1, 1, Vec::Zero(4),
                                        Mat::Identity(4, 4), {1.0}),
               Error);
}
