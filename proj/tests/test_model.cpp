#include <cmath>

#include <gtest/gtest.h>

#include <cgbound/closure.hpp>
#include <cgbound/model.hpp>

using namespace cgbound;

namespace {

Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }

Grid box2(double r1, double r2, int n = 64) { return Grid(Axis{-r1, r1, n}, Axis{-r2, r2, n}); }

}  // namespace

TEST(LocalMeanForce, CoupledQuadraticIsZPlusCY) {
  const double c = 0.5;
  auto pot = catalog::coupled_quadratic(0.1, c);
  auto map = catalog::coordinate(2, 0);
  for (double z : {-1.0, 0.0, 2.0})
    for (double y : {-0.3, 0.7}) EXPECT_NEAR(local_mean_force(pot, map, 1.0, v2(z, y))(0), z + c * y, 1e-14);
}

TEST(LocalMeanForce, IndependentOfEpsForScaleSplitPair) {
  auto map = catalog::coordinate(2, 0);
  for (const Vec& q : {v2(0.3, -0.2), v2(-1.2, 0.9)}) {
    const double f1 = local_mean_force(catalog::coupled_quadratic(0.1, 0.4), map, 1.0, q)(0);
    const double f2 = local_mean_force(catalog::coupled_quadratic(0.01, 0.4), map, 1.0, q)(0);
    EXPECT_DOUBLE_EQ(f1, f2);
    const double g1 = local_mean_force(catalog::double_well(0.1, 0.4), map, 1.0, q)(0);
    const double g2 = local_mean_force(catalog::double_well(0.02, 0.4), map, 1.0, q)(0);
    EXPECT_DOUBLE_EQ(g1, g2);
  }
}

TEST(LocalMeanForce, AffineMapHasNoCurvatureTerm) {
  Mat T(1, 2);
  T << 2.0, -1.0;
  auto map = catalog::affine(T, Vec::Constant(1, 0.3));
  auto pot = catalog::double_well(0.1, 0.25);
  const Vec q = v2(0.4, -0.8);
  EXPECT_DOUBLE_EQ(map.lap(q)(0), 0.0);
  EXPECT_NEAR(drift_integrand(pot, map, 1.0, q)(0), (T * pot.grad(q))(0), 1e-14);
  EXPECT_NEAR(local_mean_force(pot, map, 1.0, q)(0), (T * pot.grad(q))(0) / 5.0, 1e-14);
}

// Fiber average of F against the conditional Gibbs law equals -beta^{-1} d/dz log mu_hat.
TEST(LocalMeanForce, FiberAverageMatchesMarginalLogDerivative) {
  const double beta = 1.0;
  GibbsMeasure mu(catalog::double_well(0.1, 0.25), beta);
  const Grid box = box2(4, 4, 64);
  for (auto map : {catalog::coordinate(2, 0), catalog::tanh_graph(0.5)}) {
    for (double z : {-0.7, 0.2, 1.1}) {
      double num = 0.0, den = 0.0;
      for (const auto& nd : fiber_nodes(map, z, box)) {
        const double w = nd.w * std::exp(-beta * mu.pot.eval(nd.q));
        num += w * local_mean_force(mu.pot, map, beta, nd.q)(0);
        den += w;
      }
      const double h = 1e-4;
      const double fd =
          -(log_marginal_gibbs(mu, map, z + h, box) - log_marginal_gibbs(mu, map, z - h, box)) / (2 * h * beta);
      EXPECT_NEAR(num / den, fd, 1e-5 * std::max(1.0, std::abs(fd))) << map.kind << " z=" << z;
    }
  }
}

TEST(LocalMeanForce, DegenerateGramThrows) {
  auto map = catalog::expression_map("q1^2", 2);
  auto pot = catalog::coupled_quadratic(0.1, 0.25);
  try {
    local_mean_force(pot, map, 1.0, v2(0.0, 1.0));
    FAIL() << "expected degenerate_map";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_map);
  }
}

TEST(AffineAtInfinity, AffineMapIsExact) {
  Mat T(1, 2);
  T << 0.6, 0.8;
  auto r = check_affine_at_infinity(catalog::affine(T, Vec::Constant(1, 0.1)), {10, 100, 1000});
  EXPECT_TRUE(r.pass);
  EXPECT_NEAR((r.T_est - T).norm(), 0.0, 1e-10);
  EXPECT_NEAR(r.C_est, 0.0, 1e-10);
}

TEST(AffineAtInfinity, TanhGraphPasses) {
  auto r = check_affine_at_infinity(catalog::tanh_graph(0.5), {10, 100, 1000});
  EXPECT_TRUE(r.pass);
  EXPECT_NEAR(r.T_est(0, 0), 1.0, 1e-6);
  EXPECT_NEAR(r.T_est(0, 1), 0.0, 1e-6);
}

TEST(AffineAtInfinity, ParabolaFails) {
  EXPECT_FALSE(check_affine_at_infinity(catalog::parabola_graph(0.1), {10, 100, 1000}).pass);
}

TEST(Truncation, OneIsFixed) {
  GridDensity mu(Grid(Axis{0, 1, 4}), {0.1, 0.2, 0.3, 0.4});
  for (double x : truncate_density({1, 1, 1, 1}, mu, 3.0)) EXPECT_NEAR(x, 1.0, 1e-15);
}

TEST(Truncation, TwoValuedExample) {
  GridDensity mu(Grid(Axis{0, 1, 2}), {0.5, 0.5});
  auto f = truncate_density({0.0, 2.0}, mu, 4.0);
  EXPECT_NEAR(f[0], 0.25 / (9.0 / 8.0), 1e-15);
  EXPECT_NEAR(f[1], 2.0 / (9.0 / 8.0), 1e-15);
}

TEST(Truncation, LargeMRecoversBoundedDensity) {
  GridDensity mu(Grid(Axis{0, 1, 3}), {0.25, 0.5, 0.25});
  std::vector<double> f0 = {0.5, 1.0, 1.5};
  auto f = truncate_density(f0, mu, 1e6);
  for (std::size_t i = 0; i < f0.size(); ++i) EXPECT_NEAR(f[i], f0[i], 1e-14);
}

TEST(Truncation, RejectsLevelAtMostOne) {
  GridDensity mu(Grid(Axis{0, 1, 2}), {0.5, 0.5});
  EXPECT_THROW(truncate_density({1, 1}, mu, 1.0), ConfigError);
}

TEST(Gibbs, NonPositiveBetaNamesField) {
  try {
    GibbsMeasure(catalog::coupled_quadratic(0.1, 0.25), 0.0);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "physics.beta");
  }
}

TEST(Gibbs, IntegrableOnBox) {
  EXPECT_TRUE(gibbs_integrable(GibbsMeasure(catalog::coupled_quadratic(0.1, 0.25), 1.0), box2(6, 3, 64)));
}

TEST(Gibbs, GridLawIsNormalized) {
  auto g = GibbsMeasure(catalog::coupled_quadratic(0.1, 0.25), 2.0).on_grid(box2(6, 3, 64));
  EXPECT_TRUE(g.valid());
}

TEST(Catalog, DerivativesMatchFiniteDifferences) {
  for (const auto& p : {catalog::coupled_quadratic(0.1, 0.25), catalog::double_well(0.1, 0.5),
                        catalog::expression("q1^4/4 + exp(0.5*q2) + cos(q1*q2)", 2)}) {
    auto r = check_potential_derivatives(p, 2.0);
    EXPECT_TRUE(r.pass) << p.kind << " err " << r.max_rel_error;
  }
  for (const auto& m : {catalog::tanh_graph(0.7), catalog::parabola_graph(0.1), catalog::rotated(0.4),
                        catalog::expression_map("q1 + 0.3*cos(q2)", 2)}) {
    auto r = check_map(m, 3.0);
    EXPECT_TRUE(r.pass) << m.kind << " err " << r.max_rel_error;
  }
}

TEST(Catalog, ScaleSplit) {
  auto m = catalog::coordinate(2, 0);
  for (const auto& p : {catalog::coupled_quadratic(0.05, 0.3), catalog::double_well(0.05, 0.3)}) {
    EXPECT_LE(scale_split_residual(p, m, 3.0), 1e-12);
    const Vec q = v2(0.7, -1.3);
    EXPECT_NEAR(p.split->fast(q) / p.split->eps + p.split->slow(q), p.eval(q), 1e-12);
  }
  EXPECT_GT(scale_split_residual(catalog::coupled_quadratic(0.05, 0.3), catalog::coordinate(2, 1), 3.0), 1.0);
}

TEST(Catalog, QuadraticGrowthCertificate) {
  EXPECT_TRUE(check_growth(catalog::coupled_quadratic(0.1, 0.25)));
  EXPECT_FALSE(check_growth(catalog::double_well(0.1, 0.25)));
}

TEST(Catalog, NonConfiningCouplingRejected) {
  EXPECT_THROW(catalog::coupled_quadratic(0.1, 4.0), ConfigError);
}

TEST(PhaseMap, RequiresAffineBase) {
  EXPECT_THROW(PhaseMap(catalog::tanh_graph(0.5)), Error);
  PhaseMap pm(catalog::rotated(0.3));
  const Vec out = pm(v2(1.0, 2.0), v2(-1.0, 0.5));
  EXPECT_NEAR(out(0), std::cos(0.3) + 2 * std::sin(0.3), 1e-15);
  EXPECT_NEAR(out(1), -std::cos(0.3) + 0.5 * std::sin(0.3), 1e-15);
}
