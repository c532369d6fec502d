#include <cmath>

#include <gtest/gtest.h>

#include <cgbound/funcineq.hpp>

using namespace cgbound;

namespace {

// Coarse field with every cell occupied and a constant mobility.
CoefficientField occupied_field(const Grid& g, double A = 1.0) {
  CoefficientField f(g);
  for (std::size_t i = 0; i < f.size(); ++i) {
    f.counts[i] = 100;
    f.A[i] = Mat::Constant(1, 1, A);
  }
  return f;
}

double scalar_lambda(double A, double g) { return std::abs(A - g) / std::sqrt(A * g); }

}  // namespace

TEST(KappaRelent, CoupledQuadraticAnalytic) {
  auto pot = catalog::coupled_quadratic(0.1, 0.5);
  auto map = catalog::coordinate(2, 0);
  auto f = occupied_field(Grid(Axis{-2, 2, 8}));
  auto r = kappa_relent(pot, map, 1.0, f, {});
  EXPECT_EQ(r.provenance, Provenance::analytic);
  EXPECT_NEAR(r.value, 0.5, 1e-12);
  EXPECT_EQ(r.to_json()["provenance"], "analytic");
}

TEST(KappaRelent, EstimatedFromBelowAcrossEps) {
  auto map = catalog::coordinate(2, 0);
  auto f = occupied_field(Grid(Axis{-2, 2, 8}));
  SampleSpec spec;
  spec.max_cells = 4;
  for (double eps : {0.2, 0.1, 0.05}) {
    auto pot = catalog::coupled_quadratic(eps, 0.5);
    auto est = kappa_relent(pot, map, 1.0, f, spec, false);
    EXPECT_EQ(est.provenance, Provenance::estimated);
    EXPECT_LE(est.value, 0.5 * (1 + 1e-9));
    EXPECT_GE(est.value, 0.95 * 0.5);
    EXPECT_EQ(est.to_json()["provenance"], "estimated-from-samples");
    EXPECT_EQ(est.samples["estimate_kind"], "lower estimate of a supremum");
    EXPECT_EQ(est.samples["pairs_per_cell"], 1000);
  }
}

TEST(KappaRelent, SeparableIsZero) {
  auto pot = catalog::coupled_quadratic(0.1, 0.0);
  auto map = catalog::coordinate(2, 0);
  auto f = occupied_field(Grid(Axis{-2, 2, 8}));
  EXPECT_EQ(kappa_relent(pot, map, 1.0, f, {}).value, 0.0);
  SampleSpec spec;
  spec.pairs = 50;
  EXPECT_NEAR(kappa_relent(pot, map, 1.0, f, spec, false).value, 0.0, 1e-9);
}

TEST(KappaRelent, IndependentOfScaleSeparation) {
  auto map = catalog::coordinate(2, 0);
  auto f = occupied_field(Grid(Axis{-2, 2, 8}));
  const double k1 = kappa_relent(catalog::coupled_quadratic(0.2, 0.3), map, 1.0, f, {}).value;
  for (double eps : {0.1, 0.05, 0.01}) {
    EXPECT_EQ(kappa_relent(catalog::coupled_quadratic(eps, 0.3), map, 1.0, f, {}).value, k1);
    EXPECT_EQ(kappa_lambda_wasser(catalog::coupled_quadratic(eps, 0.3), map, 1.0, f, {}).kappa.value, k1);
  }
}

TEST(LambdaRelent, ScalarFormula) {
  EXPECT_NEAR(lambda_relent_value(Mat::Constant(1, 1, 1.5), Mat::Constant(1, 1, 2.0)), 0.5 / std::sqrt(3.0), 1e-14);
  EXPECT_NEAR(lambda_relent_value(Mat::Constant(1, 1, 1.5), Mat::Constant(1, 1, 2.0)), 0.2887, 1e-4);
  EXPECT_NEAR(lambda_relent_value(Mat::Constant(1, 1, 1.5), Mat::Constant(1, 1, 1.0)), 0.4082, 1e-4);
  const double sup = std::max(scalar_lambda(1.5, 1.0), scalar_lambda(1.5, 2.0));
  EXPECT_NEAR(sup, 1.0 / std::sqrt(6.0), 1e-14);
}

TEST(LambdaRelent, AffineIsZero) {
  auto f = occupied_field(Grid(Axis{-2, 2, 8}), 1.7);
  auto r = lambda_relent(catalog::rotated(0.4), f, {});
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.provenance, Provenance::analytic);
}

TEST(LambdaRelent, TanhEstimateBelowAnalyticSup) {
  const double a = 0.5, A = 1.2;
  auto f = occupied_field(Grid(Axis{-1, 1, 4}), A);
  SampleSpec spec;
  spec.box = Grid(Axis{-4, 4, 10}, Axis{-3, 3, 10});
  auto r = lambda_relent(catalog::tanh_graph(a), f, spec);
  // g = 1 + a^2 sech^4(s) ranges over (1, 1 + a^2]; |A - g| / sqrt(A g) peaks at an endpoint
  const double analytic = std::max(scalar_lambda(A, 1.0), scalar_lambda(A, 1.0 + a * a));
  EXPECT_EQ(r.provenance, Provenance::estimated);
  EXPECT_LE(r.value, analytic + 1e-12);
  EXPECT_GE(r.value, 0.95 * analytic);
}

TEST(Wasser, CoupledQuadraticAndSeparable) {
  auto map = catalog::coordinate(2, 0);
  auto f = occupied_field(Grid(Axis{-2, 2, 8}));
  auto w = kappa_lambda_wasser(catalog::coupled_quadratic(0.1, -0.4), map, 1.0, f, {});
  EXPECT_NEAR(w.kappa.value, 0.4, 1e-12);
  EXPECT_EQ(w.lambda.value, 0.0);
  SampleSpec spec;
  spec.max_cells = 3;
  auto est = kappa_lambda_wasser(catalog::coupled_quadratic(0.1, -0.4), map, 1.0, f, spec, false);
  EXPECT_LE(est.kappa.value, 0.4 * (1 + 1e-9));
  EXPECT_GE(est.kappa.value, 0.95 * 0.4);
  EXPECT_EQ(kappa_lambda_wasser(catalog::coupled_quadratic(0.1, 0.0), map, 1.0, f, {}).kappa.value, 0.0);
}

TEST(Alpha, GaussianConditional) {
  auto map = catalog::coordinate(2, 0);
  auto a = alpha_constants(catalog::coupled_quadratic(0.1, 0.5), map, 1.0, AlphaMode::gaussian_analytic);
  EXPECT_NEAR(a.lsi.value, 10.0, 1e-10);
  EXPECT_NEAR(a.ti.value, 10.0, 1e-10);
  EXPECT_NEAR(a.pi.value, 10.0, 1e-10);
  auto b = alpha_constants(catalog::coupled_quadratic(0.1, 0.5), map, 2.0, AlphaMode::gaussian_analytic);
  EXPECT_NEAR(b.lsi.value, 20.0, 1e-10);
}

TEST(Alpha, ScaleSplitStiffness) {
  auto map = catalog::coordinate(2, 0);
  const double delta = 2.0, eps = 0.05, beta = 1.5;
  auto pot = catalog::coupled_quadratic(eps, 0.3, 1.0, delta);
  EXPECT_NEAR(alpha_constants(pot, map, beta, AlphaMode::gaussian_analytic).lsi.value, beta * delta / eps, 1e-9);
  auto be = alpha_constants(pot, map, beta, AlphaMode::bakry_emery);
  EXPECT_TRUE(be.lsi.applicable);
  EXPECT_NEAR(be.lsi.value, beta * delta / eps, 1e-9);
}

TEST(Alpha, OrderingChainHolds) {
  AlphaConstants a;
  a.pi.value = 1.0;
  a.ti.value = 3.0;
  a.lsi.value = 2.0;
  a.enforce_ordering();
  EXPECT_LE(a.lsi.value, a.ti.value);
  EXPECT_LE(a.ti.value, a.pi.value);
}

TEST(Alpha, BakryEmeryNonconvexFiberNotApplicable) {
  // fiber of xi = q2 runs along q1, where the double well is concave near 0
  auto a = alpha_constants(catalog::double_well(0.1, 0.25), catalog::coordinate(2, 1), 1.0, AlphaMode::bakry_emery);
  EXPECT_FALSE(a.lsi.applicable);
  EXPECT_EQ(a.lsi.value, 0.0);
  EXPECT_NE(a.lsi.derivation.find("not applicable"), std::string::npos);
}

TEST(Alpha, GaussianModeNeedsQuadraticFiber) {
  try {
    alpha_constants(catalog::double_well(0.1, 0.25), catalog::coordinate(2, 1), 1.0, AlphaMode::gaussian_analytic);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::mode_unavailable);
  }
}

TEST(Alpha, EmpiricalVarianceNearSpectralGap) {
  AlphaOptions opt;
  opt.samples = 20000;
  auto a = alpha_constants(catalog::coupled_quadratic(0.1, 0.5), catalog::coordinate(2, 0), 1.0,
                           AlphaMode::empirical_variance, opt);
  EXPECT_EQ(a.pi.provenance, Provenance::estimated);
  EXPECT_NEAR(a.pi.value, 10.0, 0.5);
  EXPECT_FALSE(a.ti.applicable);
}

TEST(Alpha, ModeParsing) {
  EXPECT_EQ(parse_alpha_mode("bakry-emery"), AlphaMode::bakry_emery);
  try {
    parse_alpha_mode("magic");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "constants.alpha_mode");
  }
}

TEST(Alpha, PhaseSpaceFullVersusPosition) {
  auto r = alpha_phase_space(catalog::coupled_quadratic(0.1, 0.5), catalog::coordinate(2, 0), 1.0);
  EXPECT_NEAR(r.full.value, 1.0, 1e-12);
  EXPECT_NEAR(r.position_only.value, 10.0, 1e-10);
  auto r2 = alpha_phase_space(catalog::coupled_quadratic(0.1, 0.5), catalog::coordinate(2, 0), 3.0);
  EXPECT_NEAR(r2.full.value, 3.0, 1e-12);
}

TEST(KappaLangevin, CoupledQuadratic) {
  auto r = kappa_langevin(catalog::coupled_quadratic(0.1, 0.5), catalog::coordinate(2, 0));
  EXPECT_NEAR(r.value, 0.5, 1e-12);
}

TEST(Ctilde, FormulaExamples) {
  EXPECT_NEAR(ctilde_overdamped(0.975, 0.0, 1.0, Provenance::analytic, "").value, 2.95, 1e-14);
  EXPECT_NEAR(ctilde_langevin(1.0, 1.0, 0.0, Provenance::analytic, "").value, 4.0, 1e-14);
  EXPECT_EQ(ctilde_overdamped(0.0, 0.0, 2.0, Provenance::analytic, "").value, 1.0);
  EXPECT_NEAR(ctilde_overdamped(0.0, 0.5, 2.0, Provenance::analytic, "").value, 1.5, 1e-14);
}

TEST(Ctilde, FromTabulatedClosure) {
  Closure cl;
  cl.b = [](double, const Vec& z) { return Vec(0.975 * z); };
  cl.A = [](double, const Vec&) { return Mat::Identity(1, 1); };
  cl.constant_A = true;
  const Grid g(Axis{-3, 3, 30});
  auto n = closure_norms(cl, g);
  EXPECT_NEAR(n.grad_b, 0.975, 1e-8);
  EXPECT_EQ(n.div_A, 0.0);
  auto f = cl.tabulate(g);
  for (auto& c : f.counts) c = 10;
  EXPECT_NEAR(ctilde_overdamped(f, 1.0).value, 2.95, 1e-6);
}
