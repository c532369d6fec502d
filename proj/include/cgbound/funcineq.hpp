#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "closure.hpp"
#include "coeffs.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "sampling.hpp"

namespace cgbound {

enum class Provenance { analytic, estimated };

inline const char* to_string(Provenance p) { return p == Provenance::analytic ? "analytic" : "estimated-from-samples"; }

struct ConstantReport {
  std::string name;
  double value = 0.0;
  Provenance provenance = Provenance::analytic;
  /// Catalog derivation tag (analytic) or estimator description (estimated).
  std::string derivation;
  bool applicable = true;
  json samples = json::object();

  json to_json() const {
    json j = {{"name", name},
              {"value", value},
              {"provenance", to_string(provenance)},
              {"derivation", derivation},
              {"applicable", applicable}};
    if (!samples.empty()) j["samples"] = samples;
    return j;
  }
};

/// Fiber-pair sampling for sup-type constants.
struct SampleSpec {
  int pairs = 1000;           // pairs per coarse cell
  int max_cells = 64;         // coarse cells visited (evenly strided over occupied cells)
  double fiber_radius = 4.0;  // half-width of the fiber region for affine maps
  std::optional<Grid> box;    // configuration box for chart (nonlinear) maps
  std::uint64_t seed = 0;

  json to_json() const {
    json j = {{"pairs_per_cell", pairs}, {"max_cells", max_cells}, {"fiber_radius", fiber_radius}, {"seed", seed}};
    if (box) j["box"] = grid_to_json(*box);
    return j;
  }
};

namespace detail {

/// Sampler of points on one fiber together with the intrinsic distance between two of them.
struct FiberSampler {
  const CoarseMap* map = nullptr;
  Vec z;
  // affine
  Vec base;
  Mat N;
  // chart
  double lo = 0.0, hi = 0.0;
  std::vector<double> arc;  // cumulative arc length on a uniform s grid

  bool empty() const { return map->affine ? false : !(hi > lo); }

  double arc_at(double s) const {
    const double u = (s - lo) / (hi - lo) * double(arc.size() - 1);
    const std::size_t i = std::min(arc.size() - 2, std::size_t(std::max(0.0, u)));
    const double f = u - double(i);
    return (1 - f) * arc[i] + f * arc[i + 1];
  }
};

inline FiberSampler make_fiber(const CoarseMap& map, const Vec& z, const SampleSpec& spec) {
  FiberSampler f;
  f.map = &map;
  f.z = z;
  if (map.affine) {
    const Mat& T = map.affine->T;
    f.base = T.transpose() * (T * T.transpose()).ldlt().solve(z - map.affine->tau);
    f.N = kernel_basis(T);
    return f;
  }
  require(map.chart && spec.box, ErrorKind::mode_unavailable,
          "nonlinear maps need a fiber chart and a declared configuration box");
  std::tie(f.lo, f.hi) = map.chart->range(z(0), *spec.box);
  if (!(f.hi > f.lo)) return f;
  const int n = 2001;
  f.arc.assign(n, 0.0);
  Vec prev = map.chart->point(z(0), f.lo);
  for (int i = 1; i < n; ++i) {
    Vec cur = map.chart->point(z(0), f.lo + (f.hi - f.lo) * i / (n - 1));
    f.arc[std::size_t(i)] = f.arc[std::size_t(i - 1)] + (cur - prev).norm();
    prev = cur;
  }
  return f;
}

struct FiberDraw {
  Vec y;
  double s = 0.0;  // chart parameter (nonlinear maps)
};

inline FiberDraw draw(const FiberSampler& f, const SampleSpec& spec, RandomStream& rs) {
  if (f.map->affine) {
    Vec s(f.N.cols());
    for (long i = 0; i < s.size(); ++i) s(i) = spec.fiber_radius * (2.0 * rs.uniform() - 1.0);
    return {f.base + f.N * s, 0.0};
  }
  const double s = f.lo + (f.hi - f.lo) * rs.uniform();
  return {f.map->chart->point(f.z(0), s), s};
}

inline double intrinsic_distance(const FiberSampler& f, const FiberDraw& a, const FiberDraw& b) {
  if (f.map->affine) return (a.y - b.y).norm();
  return std::abs(f.arc_at(a.s) - f.arc_at(b.s));
}

inline std::vector<std::size_t> visit_cells(const CoefficientField& coeffs, int max_cells) {
  std::vector<std::size_t> occ;
  for (std::size_t i = 0; i < coeffs.size(); ++i)
    if (coeffs.occupied(i)) occ.push_back(i);
  require(!occ.empty(), ErrorKind::occupancy, "no occupied coarse cell to estimate constants on");
  if (int(occ.size()) <= max_cells) return occ;
  std::vector<std::size_t> out;
  for (int j = 0; j < max_cells; ++j) out.push_back(occ[std::size_t(double(j) * double(occ.size() - 1) / (max_cells - 1))]);
  return out;
}

inline double coverage(const CoefficientField& coeffs) {
  double tot = 0.0, occ = 0.0;
  for (std::size_t i = 0; i < coeffs.size(); ++i) {
    tot += double(coeffs.counts[i]);
    if (coeffs.occupied(i)) occ += double(coeffs.counts[i]);
  }
  return tot > 0.0 ? occ / tot : 0.0;
}

/// max over sampled pairs on sampled cells of ratio(cell, y1, y2) / d(y1, y2).
template <class Fn>
double pair_sup(const CoarseMap& map, const CoefficientField& coeffs, const SampleSpec& spec, std::uint32_t tag,
                Fn&& numerator) {
  double best = 0.0;
  for (std::size_t cell : visit_cells(coeffs, spec.max_cells)) {
    const Vec z = coeffs.grid.center(cell);
    auto fib = make_fiber(map, z, spec);
    if (fib.empty()) continue;
    RandomStream rs(spec.seed, streams::constants, tag * 65536u + std::uint32_t(cell));
    for (int p = 0; p < spec.pairs; ++p) {
      auto a = draw(fib, spec, rs), b = draw(fib, spec, rs);
      const double d = intrinsic_distance(fib, a, b);
      if (d < 1e-8) continue;
      best = std::max(best, numerator(cell, a.y, b.y) / d);
    }
  }
  return best;
}

/// T Hess V N at a handful of points; returns it when constant (so fiber-variation constants are exact).
inline std::optional<Mat> constant_cross_block(const Potential& pot, const CoarseMap& map, double radius = 3.0) {
  if (!map.affine) return std::nullopt;
  const Mat& T = map.affine->T;
  const Mat N = kernel_basis(T);
  if (pot.quadratic) return Mat(T * *pot.quadratic * N);
  RandomStream rs(0, streams::constants, 99);
  const Mat ref = T * pot.hess(Vec::Zero(pot.dim)) * N;
  for (int i = 0; i < 32; ++i) {
    Vec q = radius * rs.normal_vec(pot.dim);
    if ((T * pot.hess(q) * N - ref).norm() > 1e-9 * std::max(1.0, ref.norm())) return std::nullopt;
  }
  return ref;
}

/// N^T Hess V N (fiber-restricted Hessian) when it does not depend on q.
inline std::optional<Mat> constant_fiber_hessian(const Potential& pot, const CoarseMap& map, double radius = 3.0) {
  if (!map.affine) return std::nullopt;
  const Mat N = kernel_basis(map.affine->T);
  if (pot.quadratic) return Mat(N.transpose() * *pot.quadratic * N);
  RandomStream rs(0, streams::constants, 98);
  const Mat ref = N.transpose() * pot.hess(Vec::Zero(pot.dim)) * N;
  for (int i = 0; i < 32; ++i) {
    Vec q = radius * rs.normal_vec(pot.dim);
    if ((N.transpose() * pot.hess(q) * N - ref).norm() > 1e-9 * std::max(1.0, ref.norm())) return std::nullopt;
  }
  return ref;
}

/// |M|_{I -> A} = sqrt(lambda_max(M^T A M)).
inline double weighted_op_norm(const Mat& M, const Mat& A) {
  return std::sqrt(std::max(0.0, max_eig(symmetrize(M.transpose() * A * M))));
}

}  // namespace detail

// ---------------------------------------------------------------- kappa / lambda

/// kappa_H: sup over fibers of |F(y1) - F(y2)|_{A(z)} / d(y1, y2).
inline ConstantReport kappa_relent(const Potential& pot, const CoarseMap& map, double beta,
                                   const CoefficientField& coeffs, const SampleSpec& spec, bool allow_analytic = true) {
  ConstantReport r{"kappa_H"};
  if (allow_analytic) {
    if (auto X = detail::constant_cross_block(pot, map)) {
      const Mat& T = map.affine->T;
      const Mat G = T * T.transpose();
      r.value = detail::weighted_op_norm(G.inverse() * *X, G);
      r.derivation = "affine map, constant T Hess(V) N: |G^-1 T Hess(V) N|_{I->A}";
      return r;
    }
  }
  r.provenance = Provenance::estimated;
  r.derivation = map.affine ? "sup over sampled fiber pairs, Euclidean fiber distance (exact for affine fibers)"
                            : "sup over sampled fiber pairs, arc-length geodesic; comparability constant of the "
                              "intrinsic metric not applied";
  r.value = detail::pair_sup(map, coeffs, spec, 1, [&](std::size_t cell, const Vec& y1, const Vec& y2) {
    const Vec dF = local_mean_force(pot, map, beta, y1) - local_mean_force(pot, map, beta, y2);
    return std::sqrt(std::max(0.0, dF.dot(coeffs.A[cell] * dF)));
  });
  r.samples = spec.to_json();
  r.samples["coverage"] = detail::coverage(coeffs);
  r.samples["estimate_kind"] = "lower estimate of a supremum";
  return r;
}

/// |A^{-1/2}(A - g) g^{-1/2}| for one mobility / Gram pair.
inline double lambda_relent_value(const Mat& A, const Mat& g) {
  return op_norm(sym_inv_sqrt(A) * (A - g) * sym_inv_sqrt(g));
}

/// lambda_H = sup |A^{-1/2}(A - Dxi Dxi^T)(Dxi Dxi^T)^{-1/2}|; zero for affine maps.
inline ConstantReport lambda_relent(const CoarseMap& map, const CoefficientField& coeffs, const SampleSpec& spec) {
  ConstantReport r{"lambda_H"};
  if (map.affine) {
    r.value = 0.0;
    r.derivation = "affine map: A = Dxi Dxi^T is constant";
    return r;
  }
  r.provenance = Provenance::estimated;
  r.derivation = "sup over sampled fiber points";
  double best = 0.0;
  for (std::size_t cell : detail::visit_cells(coeffs, spec.max_cells)) {
    auto fib = detail::make_fiber(map, coeffs.grid.center(cell), spec);
    if (fib.empty()) continue;
    RandomStream rs(spec.seed, streams::constants, 2u * 65536u + std::uint32_t(cell));
    for (int p = 0; p < spec.pairs; ++p) {
      auto a = detail::draw(fib, spec, rs);
      best = std::max(best, lambda_relent_value(coeffs.A[cell], map.gram(a.y)));
    }
  }
  r.value = best;
  r.samples = spec.to_json();
  r.samples["coverage"] = detail::coverage(coeffs);
  return r;
}

struct WasserConstants {
  ConstantReport kappa, lambda;
};

/// kappa_W (variation of Dxi grad V - Delta xi / beta) and lambda_W (variation of sqrt(Dxi Dxi^T)).
inline WasserConstants kappa_lambda_wasser(const Potential& pot, const CoarseMap& map, double beta,
                                           const CoefficientField& coeffs, const SampleSpec& spec,
                                           bool allow_analytic = true) {
  WasserConstants w{{"kappa_W"}, {"lambda_W"}};
  std::optional<Mat> X = allow_analytic ? detail::constant_cross_block(pot, map) : std::nullopt;
  if (X) {
    w.kappa.value = op_norm(*X);
    w.kappa.derivation = "affine map, constant T Hess(V) N: |T Hess(V) N|";
  } else {
    w.kappa.provenance = Provenance::estimated;
    w.kappa.derivation = "sup over sampled fiber pairs";
    w.kappa.value = detail::pair_sup(map, coeffs, spec, 3, [&](std::size_t, const Vec& y1, const Vec& y2) {
      return (drift_integrand(pot, map, beta, y1) - drift_integrand(pot, map, beta, y2)).norm();
    });
    w.kappa.samples = spec.to_json();
    w.kappa.samples["coverage"] = detail::coverage(coeffs);
  }
  if (map.affine) {
    w.lambda.value = 0.0;
    w.lambda.derivation = "affine map: sqrt(Dxi Dxi^T) is constant";
  } else {
    w.lambda.provenance = Provenance::estimated;
    w.lambda.derivation = "sup over sampled fiber pairs, Frobenius norm";
    w.lambda.value = detail::pair_sup(map, coeffs, spec, 4, [&](std::size_t, const Vec& y1, const Vec& y2) {
      return (sym_sqrt(map.gram(y1)) - sym_sqrt(map.gram(y2))).norm();
    });
    w.lambda.samples = spec.to_json();
  }
  return w;
}

/// Langevin interaction constant: sup |Dxi(grad V(q1) - grad V(q2))| / d over phase-space fibers.
/// The sup is attained at equal momenta, so it coincides with the positional fiber variation.
inline ConstantReport kappa_langevin(const Potential& pot, const CoarseMap& map, const CoefficientField* coeffs = nullptr,
                                     const SampleSpec& spec = {}) {
  require(bool(map.affine), ErrorKind::degenerate_map, "Langevin constants need an affine coarse map");
  ConstantReport r{"kappa"};
  if (auto X = detail::constant_cross_block(pot, map)) {
    r.value = op_norm(*X);
    r.derivation = "affine map, constant T Hess(V) N: |T Hess(V) N|";
    return r;
  }
  require(coeffs != nullptr, ErrorKind::incomplete_report, "kappa needs a coarse grid for the estimated mode");
  r.provenance = Provenance::estimated;
  r.derivation = "sup over sampled fiber pairs at equal momenta";
  const Mat T = map.affine->T;
  r.value = detail::pair_sup(map, *coeffs, spec, 5, [&](std::size_t, const Vec& y1, const Vec& y2) {
    return (T * (pot.grad(y1) - pot.grad(y2))).norm();
  });
  r.samples = spec.to_json();
  return r;
}

// ---------------------------------------------------------------- alpha constants

enum class AlphaMode { gaussian_analytic, bakry_emery, empirical_variance };

inline AlphaMode parse_alpha_mode(const std::string& s) {
  if (s == "gaussian-analytic") return AlphaMode::gaussian_analytic;
  if (s == "bakry-emery") return AlphaMode::bakry_emery;
  if (s == "empirical-variance") return AlphaMode::empirical_variance;
  throw ConfigError("constants.alpha_mode", "expected gaussian-analytic, bakry-emery or empirical-variance, got '" + s + "'");
}

struct AlphaConstants {
  ConstantReport pi{"alpha_PI"}, ti{"alpha_TI"}, lsi{"alpha_LSI"};

  /// Imposes alpha_LSI <= alpha_TI <= alpha_PI by lowering the larger constants (keeps each a valid bound).
  void enforce_ordering() {
    if (ti.value > pi.value) ti.value = pi.value, ti.derivation += "; capped by alpha_PI";
    if (lsi.value > ti.value) lsi.value = ti.value, lsi.derivation += "; capped by alpha_TI";
  }
  json to_json() const { return json::array({pi.to_json(), ti.to_json(), lsi.to_json()}); }
};

struct AlphaOptions {
  double radius = 4.0;        // box half-width for Bakry-Emery infimum sampling
  int points = 4096;          // Bakry-Emery sample points
  std::vector<double> z_values{-1.0, 0.0, 1.0};  // fibers probed by the empirical mode
  long samples = 20000;       // conditional samples per fiber (empirical mode)
  std::uint64_t seed = 0;
};

inline AlphaConstants alpha_constants(const Potential& pot, const CoarseMap& map, double beta, AlphaMode mode,
                                      const AlphaOptions& opt = {}) {
  if (!(beta > 0.0)) throw ConfigError("physics.beta", "must be positive");
  AlphaConstants a;
  auto all = [&](double v, Provenance p, const std::string& tag, bool ok = true) {
    for (ConstantReport* c : {&a.pi, &a.ti, &a.lsi}) c->value = v, c->provenance = p, c->derivation = tag, c->applicable = ok;
  };
  switch (mode) {
    case AlphaMode::gaussian_analytic: {
      auto H = detail::constant_fiber_hessian(pot, map);
      require(bool(H), ErrorKind::mode_unavailable,
              "gaussian-analytic constants need an affine map with a quadratic fiber potential");
      const double lmin = min_eig(*H);
      require(lmin > 0.0, ErrorKind::mode_unavailable, "fiber potential is not strictly convex");
      all(beta * lmin, Provenance::analytic, "Gaussian conditional: 1 / lambda_max(fiber covariance)");
      break;
    }
    case AlphaMode::bakry_emery: {
      require(bool(map.affine), ErrorKind::mode_unavailable, "Bakry-Emery mode needs an affine map");
      const Mat N = kernel_basis(map.affine->T);
      RandomStream rs(opt.seed, streams::constants, 7);
      double inf = min_eig(N.transpose() * pot.hess(Vec::Zero(pot.dim)) * N);
      for (int i = 0; i < opt.points; ++i) {
        Vec q(pot.dim);
        for (int j = 0; j < pot.dim; ++j) q(j) = opt.radius * (2.0 * rs.uniform() - 1.0);
        inf = std::min(inf, min_eig(N.transpose() * pot.hess(q) * N));
      }
      const bool ok = inf > 0.0;
      all(ok ? beta * inf : 0.0, Provenance::estimated,
          ok ? "Bakry-Emery: beta * inf of the fiber Hessian over sampled points" : "not applicable: nonconvex fiber",
          ok);
      for (ConstantReport* c : {&a.pi, &a.ti, &a.lsi})
        c->samples = {{"points", opt.points}, {"radius", opt.radius}, {"seed", opt.seed}, {"min_fiber_eig", inf}};
      break;
    }
    case AlphaMode::empirical_variance: {
      require(bool(map.affine), ErrorKind::mode_unavailable, "empirical mode needs an affine map");
      GibbsMeasure mu(pot, beta);
      const Mat N = kernel_basis(map.affine->T);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t zi = 0; zi < opt.z_values.size(); ++zi) {
        ConditionalOptions co;
        co.lineage = {opt.seed, streams::conditional, std::uint32_t(200 + zi)};
        co.chain.burn_in = 2000;
        auto cs = sample_conditional_affine(mu, map, Vec::Constant(map.k, opt.z_values[zi]), opt.samples, co);
        Mat S = cs.points * N;  // fiber coordinates
        for (long c = 0; c < S.cols(); ++c) {
          const Vec s = S.col(c).array() - S.col(c).mean();
          // test functions s, s^2, s^3: Rayleigh quotient E|f'|^2 / Var f
          for (int p = 1; p <= 3; ++p) {
            const Vec f = s.array().pow(p), df = p * s.array().pow(p - 1);
            const double var = (f.array() - f.mean()).square().mean();
            if (var > 0) best = std::min(best, df.squaredNorm() / double(df.size()) / var);
          }
        }
      }
      a.pi = {"alpha_PI", best, Provenance::estimated,
              "Rayleigh quotient over test functions s, s^2, s^3 (upper estimate of the spectral gap; diagnostic)"};
      a.ti = {"alpha_TI", best, Provenance::estimated, "not identified by the empirical mode; set to alpha_PI", false};
      a.lsi = {"alpha_LSI", best, Provenance::estimated, "not identified by the empirical mode; set to alpha_PI", false};
      a.pi.samples = {{"z_values", opt.z_values}, {"samples_per_fiber", opt.samples}, {"seed", opt.seed}};
      break;
    }
  }
  a.enforce_ordering();
  return a;
}

struct PhaseSpaceAlpha {
  ConstantReport full;           // full phase-space conditional (positions and momenta)
  ConstantReport position_only;  // positional fiber conditional only
};

/// Talagrand constants of the phase-space conditional measure. The momentum fiber is N(0, Id / beta), so
/// the full constant is capped at beta while the positional constant scales with the fiber stiffness.
inline PhaseSpaceAlpha alpha_phase_space(const Potential& pot, const CoarseMap& map, double beta,
                                         AlphaMode mode = AlphaMode::gaussian_analytic, const AlphaOptions& opt = {}) {
  require(bool(map.affine), ErrorKind::degenerate_map, "phase-space constants need an affine coarse map");
  auto pos = alpha_constants(pot, map, beta, mode, opt);
  PhaseSpaceAlpha r;
  r.position_only = pos.ti;
  r.position_only.name = "alpha_TI_position";
  r.full = pos.ti;
  r.full.name = "alpha_TI_phase";
  if (r.full.value > beta) {
    r.full.value = beta;
    r.full.derivation += "; min with momentum fiber constant beta";
  }
  return r;
}

// ---------------------------------------------------------------- growth constants

/// 1 + max(4 |div_z A|^2 / beta, 2 |grad_z b|).
inline ConstantReport ctilde_overdamped(double grad_b_sup, double div_A_sup, double beta, Provenance p,
                                        const std::string& derivation) {
  return {"ctilde_W", 1.0 + std::max(4.0 * div_A_sup * div_A_sup / beta, 2.0 * grad_b_sup), p, derivation};
}

/// 1 + max(1 - 2 gamma, alpha) + max(3 + alpha, 3 alpha + 1) |grad_{z,v} b|.
inline ConstantReport ctilde_langevin(double grad_b_sup, double gamma, double alpha, Provenance p,
                                      const std::string& derivation) {
  return {"ctilde", 1.0 + std::max(1.0 - 2.0 * gamma, alpha) + std::max(3.0 + alpha, 3.0 * alpha + 1.0) * grad_b_sup, p,
          derivation};
}

inline ConstantReport ctilde_overdamped(const CoefficientField& eff, double beta) {
  return ctilde_overdamped(eff.grad_b_sup(), eff.div_A_sup(), beta, Provenance::estimated,
                           "finite-difference sup norms over occupied cells");
}

/// Sup norms of a closure's b Jacobian and div A by central differences over the given coarse grid centers.
struct ClosureNorms {
  double grad_b = 0.0, div_A = 0.0;
};

inline ClosureNorms closure_norms(const Closure& cl, const Grid& coarse, double t = 0.0) {
  ClosureNorms n;
  const int k = cl.k;
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    const Vec z = coarse.center(i);
    Mat J(k, k);
    Vec div = Vec::Zero(k);
    for (int a = 0; a < k; ++a) {
      const double h = 1e-4 * std::max(1.0, std::abs(z(a)));
      Vec zp = z, zm = z;
      zp(a) += h, zm(a) -= h;
      J.col(a) = (cl.b(t, zp) - cl.b(t, zm)) / (2 * h);
      if (!cl.constant_A) div += (cl.A(t, zp).col(a) - cl.A(t, zm).col(a)) / (2 * h);
    }
    n.grad_b = std::max(n.grad_b, op_norm(J));
    n.div_A = std::max(n.div_A, div.norm());
  }
  return n;
}

}  // namespace cgbound
