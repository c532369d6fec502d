#include <cmath>

#include <gtest/gtest.h>

#include <cgbound/integrators.hpp>

using namespace cgbound;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }

Closure linear_closure(const Mat& B, const Mat& A) {
  Closure c;
  c.k = int(B.rows());
  c.b = [B](double, const Vec& z) { return Vec(B * z); };
  c.A = [A](double, const Vec&) { return A; };
  c.constant_A = true;
  return c;
}

Potential flat(int d) { return catalog::quadratic(Mat::Zero(d, d)); }

SdeConfig cfg_of(double h, double t_end = 1.0, double beta = 1.0, double gamma = 1.0) {
  SdeConfig c;
  c.h = h;
  c.t_end = t_end;
  c.beta = beta;
  c.gamma = gamma;
  return c;
}

}  // namespace

TEST(OverdampedEM, DeterministicQuadraticStep) {
  auto pot = catalog::quadratic(Mat::Identity(1, 1));
  EXPECT_NEAR(step_overdamped_em(v1(1.0), pot, cfg_of(0.1), v1(0.0))(0), 0.9, 1e-15);
}

TEST(OverdampedEM, PureDiffusionIncrement) {
  const auto cfg = cfg_of(0.01);
  EXPECT_NEAR(step_overdamped_em(v2(0, 0), flat(2), cfg, v2(1.0, -2.0))(1), -2.0 * std::sqrt(0.02), 1e-15);
  RandomStream rs(1, streams::overdamped, 0);
  double s2 = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) s2 += std::pow(step_overdamped_em(v1(0), flat(1), cfg, rs.normal_vec(1))(0), 2);
  EXPECT_NEAR(s2 / n / 0.02, 1.0, 0.02);
}

TEST(OverdampedEM, StationaryVarianceBracket) {
  auto pot = catalog::quadratic(Mat::Identity(1, 1));
  const double h = 0.1;
  const auto cfg = cfg_of(h);
  RandomStream rs(2, streams::overdamped, 0);
  Vec q = v1(0.0);
  for (int i = 0; i < 1000; ++i) q = step_overdamped_em(q, pot, cfg, rs.normal_vec(1));
  double s2 = 0.0;
  const long n = 1000000;
  for (long i = 0; i < n; ++i) {
    q = step_overdamped_em(q, pot, cfg, rs.normal_vec(1));
    s2 += q(0) * q(0);
  }
  const double v = s2 / n;
  EXPECT_GE(v, 0.97 / (1 + h / 2));
  EXPECT_LE(v, 1.03 / (1 - h / 2));
}

TEST(OverdampedEM, WeakOrderOne) {
  auto pot = catalog::quadratic(Mat::Identity(1, 1));
  const Mat q0 = Mat::Constant(100000, 1, 10.0);
  auto err = [&](double h) {
    RunOptions o;
    o.n_out = 1;
    auto s = simulate_overdamped(pot, cfg_of(h), q0, o);
    return std::pair{std::abs(s.mean.back()(0) - 10.0 * std::exp(-1.0)),
                     std::abs(s.var.back()(0) - (1.0 - std::exp(-2.0)))};
  };
  auto [m1, s1] = err(0.2);
  auto [m2, s2] = err(0.1);
  EXPECT_GT(m1 / m2, 1.6);
  EXPECT_LT(m1 / m2, 2.5);
  EXPECT_GT(s1 / s2, 1.6);
  EXPECT_LT(s1 / s2, 2.6);
}

TEST(OverdampedEM, StepSizeGuard) {
  auto cfg = cfg_of(0.1);
  cfg.lipschitz = 10.0;
  try {
    cfg.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::step_size);
  }
}

TEST(OverdampedEM, BlowUpIsRecorded) {
  auto pot = catalog::expression("-q1^4", 1);
  const auto cfg = cfg_of(0.1);
  try {
    Vec q = v1(5.0);
    for (long s = 0; s < 100; ++s) q = step_overdamped_em(q, pot, cfg, v1(0.0), s);
    FAIL();
  } catch (const BlowUpError& e) {
    EXPECT_GE(e.step(), 0);
    EXPECT_GT(e.time(), 0.0);
  }
  Mat q0(4, 1);
  q0 << 0.0, 0.1, 5.0, -5.0;
  auto quartic = catalog::expression("q1^4/4 - q1^6/100", 1);
  auto s = simulate_overdamped(quartic, cfg_of(0.01, 0.5), q0);
  EXPECT_EQ(s.n_traj, 4);
  EXPECT_EQ(s.aborted, 2);
}

TEST(Baoab, FreeParticleFriction) {
  auto r = step_langevin_baoab(v1(0.0), v1(1.0), flat(1), cfg_of(0.1), v1(0.0));
  EXPECT_NEAR(r.p(0), std::exp(-0.1), 1e-15);
  EXPECT_NEAR(r.q(0), 0.05 * (1.0 + std::exp(-0.1)), 1e-15);
}

TEST(Baoab, StationaryCovarianceIsIdentity) {
  auto pot = catalog::quadratic(Mat::Identity(1, 1));
  const auto cfg = cfg_of(0.05);
  RandomStream rs(3, streams::langevin, 0);
  Vec q = v1(0.0), p = v1(0.0);
  Mat S = Mat::Zero(2, 2);
  const long n = 1000000;
  for (long i = 0; i < n + 2000; ++i) {
    auto r = step_langevin_baoab(q, p, pot, cfg, rs.normal_vec(1));
    q = r.q, p = r.p;
    if (i >= 2000) S += v2(q(0), p(0)) * v2(q(0), p(0)).transpose();
  }
  S /= double(n);
  EXPECT_LE((S - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.05);
}

TEST(Baoab, VerletLimitHasThirdOrderLocalError) {
  auto pot = catalog::quadratic(Mat::Identity(1, 1));
  auto err = [&](double h) {
    auto r = step_langevin_baoab(v1(1.0), v1(0.0), pot, cfg_of(h, 1.0, 1.0, 1e-14), v1(0.0));
    return std::hypot(r.q(0) - std::cos(h), r.p(0) + std::sin(h));
  };
  const double ratio = err(0.1) / err(0.05);
  EXPECT_NEAR(ratio, 8.0, 0.5);
  // gamma -> 0 reduces to velocity Verlet
  const double h = 0.1;
  auto r = step_langevin_baoab(v1(1.0), v1(0.3), pot, cfg_of(h, 1.0, 1.0, 1e-14), v1(0.0));
  const double ph = 0.3 - 0.5 * h * 1.0, qn = 1.0 + h * ph, pn = ph - 0.5 * h * qn;
  EXPECT_NEAR(r.q(0), qn, 1e-14);
  EXPECT_NEAR(r.p(0), pn, 1e-14);
}

TEST(Effective, DeterministicStep) {
  auto cl = linear_closure(Mat::Identity(1, 1), Mat::Identity(1, 1));
  EXPECT_NEAR(step_effective(v1(1.0), cl, 0.0, cfg_of(0.1), v1(0.0))(0), 0.9, 1e-15);
}

TEST(Effective, UsesSymmetricSquareRoot) {
  Mat A = Mat::Zero(2, 2);
  A.diagonal() << 4.0, 9.0;
  auto cl = linear_closure(Mat::Zero(2, 2), A);
  const double h = 0.02, beta = 2.0;
  const Vec z = step_effective(v2(0, 0), cl, 0.0, cfg_of(h, 1.0, beta), v2(1.0, 1.0));
  EXPECT_NEAR(z(0), std::sqrt(2 * h / beta) * 2.0, 1e-14);
  EXPECT_NEAR(z(1), std::sqrt(2 * h / beta) * 3.0, 1e-14);
  Mat G(2, 2);
  G << 2.0, 0.7, 0.7, 1.5;
  const Mat R = sym_sqrt(G);
  EXPECT_LE((R * R - G).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Effective, StationaryVarianceOfCoupledClosure) {
  const double c = 0.5, eps = 0.1, beta = 1.0;
  const double kappa = 1.0 - c * c * eps;
  auto cl = linear_closure(Mat::Constant(1, 1, kappa), Mat::Identity(1, 1));
  RunOptions o;
  o.n_out = 1;
  auto s = simulate_effective(cl, cfg_of(0.02, 4.0, beta), Mat::Zero(8000, 1), o);
  EXPECT_NEAR(s.var.back()(0) * beta * kappa, 1.0, 0.05);
}

TEST(Effective, OutsideTabulatedGridIsAnError) {
  CoefficientField f(Grid(Axis{-1, 1, 10}));
  auto cl = Closure::from_field(f);
  try {
    step_effective(v1(1.5), cl, 0.0, cfg_of(0.01), v1(0.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::extrapolation);
  }
}

TEST(CoupledPair, IdenticalPairNeverSeparates) {
  auto cl = linear_closure(Mat::Constant(1, 1, 0.8), Mat::Constant(1, 1, 1.3));
  const Mat z0 = Mat::Constant(200, 1, 0.7);
  CoupledPairOptions o;
  o.n_out = 5;
  auto r = simulate_coupled_pair(z0, z0, cl, cl, cfg_of(0.01), o);
  for (std::size_t j = 0; j < r.msd.size(); ++j) {
    EXPECT_EQ(r.msd[j], 0.0);
    EXPECT_EQ(r.diffusion_mismatch[j], 0.0);
  }
}

TEST(CoupledPair, OffsetDecaysLikeOU) {
  auto cl = linear_closure(Mat::Identity(1, 1), Mat::Identity(1, 1));
  const double delta = 0.5;
  CoupledPairOptions o;
  o.n_out = 4;
  auto r = simulate_coupled_pair(Mat::Constant(100, 1, 1.0), Mat::Constant(100, 1, 1.0 + delta), cl, cl,
                                 cfg_of(0.01), o);
  for (std::size_t j = 0; j < r.times.size(); ++j) {
    const double ref = delta * delta * std::exp(-2.0 * r.times[j]);
    EXPECT_NEAR(r.msd[j], ref, 0.05 * ref);
  }
}

TEST(CoupledPair, BoundsExactWassersteinDistance) {
  // Gaussian closures with different drifts from a common Gaussian start.
  auto hat = linear_closure(Mat::Constant(1, 1, 1.0), Mat::Identity(1, 1));
  auto eff = linear_closure(Mat::Constant(1, 1, 0.6), Mat::Identity(1, 1));
  const long n = 20000;
  RandomStream rs(4, streams::initial, 0);
  Mat z0(n, 1);
  for (long i = 0; i < n; ++i) z0(i, 0) = 1.0 + 0.3 * rs.normal();
  CoupledPairOptions o;
  o.n_out = 5;
  auto r = simulate_coupled_pair(z0, z0, hat, eff, cfg_of(0.01), o);
  for (std::size_t j = 0; j < r.times.size(); ++j) {
    const double t = r.times[j];
    // both laws are Gaussian with unit diffusion: mean m e^{-bt}, variance from the OU formula
    auto law = [&](double b) {
      const double e = std::exp(-b * t);
      return std::pair{1.0 * e, 0.09 * e * e + (1 - e * e) / b};
    };
    auto [m1, s1] = law(1.0);
    auto [m2, s2] = law(0.6);
    const double w2sq = (m1 - m2) * (m1 - m2) + std::pow(std::sqrt(s1) - std::sqrt(s2), 2);
    EXPECT_GE(r.msd[j] + 3 * r.msd_se[j], w2sq) << "t=" << t;
  }
}

TEST(CoupledPair, DiffusionMismatchAccumulates) {
  auto a = linear_closure(Mat::Zero(1, 1), Mat::Identity(1, 1));
  auto b = linear_closure(Mat::Zero(1, 1), Mat::Constant(1, 1, 4.0));
  CoupledPairOptions o;
  o.n_out = 2;
  auto r = simulate_coupled_pair(Mat::Zero(10, 1), Mat::Zero(10, 1), a, b, cfg_of(0.01), o);
  EXPECT_NEAR(r.diffusion_mismatch.back(), 1.0, 1e-9);
}
