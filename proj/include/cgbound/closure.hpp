#pragma once

#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "coeffs.hpp"
#include "errors.hpp"
#include "grid.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "sampling.hpp"

namespace cgbound {

// ---------------------------------------------------------------- fiber quadrature

struct FiberNode {
  Vec q;
  double w;  // includes the chart weight (line element / Jac xi)
};

/// 64-point Gauss-Legendre nodes per segment along the fiber {xi = z} inside the box.
inline std::vector<FiberNode> fiber_nodes(const CoarseMap& map, double z, const Grid& box, double seg_len = 0.5) {
  require(bool(map.chart), ErrorKind::mode_unavailable, "fiber quadrature needs a d = 2, k = 1 chart");
  const auto& ch = *map.chart;
  auto [lo, hi] = ch.range(z, box);
  std::vector<FiberNode> out;
  if (!(hi > lo)) return out;
  using GL = boost::math::quadrature::gauss<double, 64>;
  const auto& xs = GL::abscissa();
  const auto& ws = GL::weights();
  const int nseg = std::max(1, int(std::ceil((hi - lo) / seg_len)));
  const double L = (hi - lo) / nseg;
  for (int s = 0; s < nseg; ++s) {
    const double mid = lo + (s + 0.5) * L, half = 0.5 * L;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      for (int sign : {-1, 1}) {
        if (xs[i] == 0.0 && sign < 0) continue;
        double t = mid + sign * half * xs[i];
        Vec q = ch.point(z, t);
        bool inside = true;
        for (int a = 0; a < 2; ++a) inside = inside && q(a) >= box.axes[a].lo && q(a) <= box.axes[a].hi;
        if (!inside) continue;
        out.push_back({q, half * ws[i] * ch.weight(z, t)});
      }
    }
  }
  return out;
}

/// Bilinear interpolation of a 2D density (mass / cell volume) at q; zero outside the box.
inline double interp_density(const GridDensity& d, const Vec& q) {
  const Axis &a0 = d.grid.axes[0], &a1 = d.grid.axes[1];
  if (q(0) < a0.lo || q(0) > a0.hi || q(1) < a1.lo || q(1) > a1.hi) return 0.0;
  auto split = [](const Axis& ax, double v, int& i, double& f) {
    double x = std::clamp((v - ax.lo) / ax.width() - 0.5, 0.0, double(ax.n - 1));
    i = std::min(int(x), ax.n - 2);
    f = x - i;
  };
  int i, j;
  double fi, fj;
  split(a0, q(0), i, fi);
  split(a1, q(1), j, fj);
  const int n1 = a1.n;
  auto v = [&](int a, int c) { return d.values[std::size_t(a) * n1 + c]; };
  double m = (1 - fi) * ((1 - fj) * v(i, j) + fj * v(i, j + 1)) + fi * ((1 - fj) * v(i + 1, j) + fj * v(i + 1, j + 1));
  return m / d.grid.cell_volume();
}

/// Axis index when the map is xi = q_axis exactly; -1 otherwise.
inline int aligned_axis(const CoarseMap& map) {
  if (!map.affine || map.k != 1) return -1;
  const auto& A = *map.affine;
  if (A.tau(0) != 0.0) return -1;
  int axis = -1;
  for (int c = 0; c < map.d; ++c) {
    if (A.T(0, c) == 1.0 && axis < 0) axis = c;
    else if (A.T(0, c) != 0.0) return -1;
  }
  return axis;
}

// ---------------------------------------------------------------- marginals

struct MarginalResult {
  GridDensity marginal;
  double captured_mass = 1.0;  // mass landing inside the coarse grid / box before renormalization
  bool truncated = false;
};

namespace detail {

/// CDF at s of U(-A/2, A/2) + U(-B/2, B/2).
inline double trapezoid_cdf(double s, double A, double B) {
  if (A < B) std::swap(A, B);
  const double w = 0.5 * (A + B);
  if (s <= -w) return 0.0;
  if (s >= w) return 1.0;
  if (B <= 1e-12 * A) return std::clamp((s + 0.5 * A) / A, 0.0, 1.0);
  auto G = [](double x) { return x > 0 ? 0.5 * x * x : 0.0; };
  const double v = 0.5 * (A - B);
  return (G(s + w) - G(s + v) - G(s - v) + G(s - w)) / (A * B);
}

}  // namespace detail

/// Push-forward of a 2D grid density under xi onto a 1D coarse grid.
/// Aligned coordinate maps sum the grid's own columns; other affine maps push each cell's
/// uniform mass forward exactly; nonlinear charted maps use fiber quadrature.
inline MarginalResult marginal_density(const GridDensity& psi, const CoarseMap& map, const Grid& coarse) {
  require(psi.grid.dim() == 2 && coarse.dim() == 1 && map.k == 1, ErrorKind::mode_unavailable,
          "marginal_density maps a 2D density to a 1D grid");
  MarginalResult r;
  std::vector<double> m(coarse.size(), 0.0);
  const Axis& cz = coarse.axes[0];
  const int ax = aligned_axis(map);
  const int n0 = psi.grid.axes[0].n, n1 = psi.grid.axes[1].n;
  if (ax >= 0 && psi.grid.axes[ax] == cz) {
    for (int i = 0; i < n0; ++i)
      for (int j = 0; j < n1; ++j) m[std::size_t(ax == 0 ? i : j)] += psi.values[std::size_t(i) * n1 + j];
  } else if (map.affine) {
    const Mat& T = map.affine->T;
    const double A = std::abs(T(0, 0)) * psi.grid.axes[0].width(), B = std::abs(T(0, 1)) * psi.grid.axes[1].width();
    const double half = 0.5 * (A + B);
    for (std::size_t c = 0; c < psi.values.size(); ++c) {
      const double mass = psi.values[c];
      if (mass == 0.0) continue;
      const double z0 = map.xi(psi.grid.center(c))(0);
      int lo = std::max(0, int(std::floor((z0 - half - cz.lo) / cz.width())));
      int hi = std::min(cz.n - 1, int(std::floor((z0 + half - cz.lo) / cz.width())));
      for (int i = lo; i <= hi; ++i) {
        double p = detail::trapezoid_cdf(cz.edge(i + 1) - z0, A, B) - detail::trapezoid_cdf(cz.edge(i) - z0, A, B);
        m[std::size_t(i)] += mass * p;
      }
    }
  } else {
    for (int i = 0; i < cz.n; ++i) {
      double s = 0.0;
      for (const auto& nd : fiber_nodes(map, cz.center(i), psi.grid)) s += nd.w * interp_density(psi, nd.q);
      m[std::size_t(i)] = s * cz.width();
    }
  }
  double tot = 0.0;
  for (double x : m) tot += x;
  r.captured_mass = tot / psi.mass();
  r.truncated = std::abs(r.captured_mass - 1.0) > 1e-10;
  r.marginal = GridDensity(coarse, std::move(m), psi.time);
  r.marginal.normalize();
  return r;
}

/// psi^xi(z) for a function psi: fiber integral of psi / Jac xi inside the box.
inline double fiber_integral(const std::function<double(const Vec&)>& psi, const CoarseMap& map, double z,
                             const Grid& box, double seg_len = 0.5) {
  double s = 0.0;
  for (const auto& nd : fiber_nodes(map, z, box, seg_len)) s += nd.w * psi(nd.q);
  return s;
}

/// Marginal of a (normalized) density function on a coarse grid via fiber quadrature at cell centers.
inline MarginalResult marginal_density(const std::function<double(const Vec&)>& psi, const CoarseMap& map,
                                       const Grid& coarse, const Grid& box) {
  const Axis& cz = coarse.axes[0];
  std::vector<double> m(coarse.size());
  for (int i = 0; i < cz.n; ++i) m[std::size_t(i)] = fiber_integral(psi, map, cz.center(i), box) * cz.width();
  MarginalResult r;
  double tot = 0.0;
  for (double x : m) tot += x;
  r.captured_mass = tot;
  r.truncated = std::abs(tot - 1.0) > 1e-10;
  r.marginal = GridDensity(coarse, std::move(m));
  r.marginal.normalize();
  return r;
}

struct LevelsetCheck {
  double max_rel_error = 0.0;
  int cells_used = 0;
  int cells_excluded = 0;
};

/// Compares centered differences of psi^xi with the fiber integral of div(psi G^{-1} Dxi) / Jac xi.
/// The error is max_i |FD_i - I_i| / max_i |I_i| over interior cells with psi^xi above a guard.
inline LevelsetCheck levelset_gradient_check(const std::function<double(const Vec&)>& psi,
                                             const std::function<Vec(const Vec&)>& grad_psi, const CoarseMap& map,
                                             const Grid& coarse, const Grid& box, double guard = 1e-10) {
  const Axis& cz = coarse.axes[0];
  const int n = cz.n;
  std::vector<double> marg(static_cast<std::size_t>(n)), rhs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double z = cz.center(i);
    double s = 0.0, r = 0.0;
    for (const auto& nd : fiber_nodes(map, z, box)) {
      const Mat J = map.jac(nd.q);
      const Mat Gi = checked_gram_inverse(J * J.transpose());
      const Vec w = (Gi * J).transpose();  // G^{-1} Dxi as a d-vector (k = 1)
      const double v = psi(nd.q);
      double div = grad_psi(nd.q).dot(w);
      if (!map.affine) div += v * div_ginv_jac(map, nd.q)(0);
      s += nd.w * v;
      r += nd.w * div;
    }
    marg[std::size_t(i)] = s;
    rhs[std::size_t(i)] = r;
  }
  double peak = 0.0;
  for (double x : marg) peak = std::max(peak, std::abs(x));
  LevelsetCheck out;
  double scale = 0.0, err = 0.0;
  for (int i = 1; i + 1 < n; ++i) {
    if (std::abs(marg[std::size_t(i)]) <= guard * peak) {
      ++out.cells_excluded;
      continue;
    }
    const double fd = (marg[std::size_t(i + 1)] - marg[std::size_t(i - 1)]) / (2.0 * cz.width());
    err = std::max(err, std::abs(fd - rhs[std::size_t(i)]));
    scale = std::max(scale, std::abs(rhs[std::size_t(i)]));
    ++out.cells_used;
  }
  out.max_rel_error = scale > 0 ? err / scale : err;
  return out;
}

// ---------------------------------------------------------------- coefficients

/// Conditional averages of Dxi grad V - beta^{-1} Lap xi and Dxi Dxi^T against a 2D grid density.
inline CoefficientField cg_coefficients(const GridDensity& state, const Potential& pot, const CoarseMap& map,
                                        double beta, const Grid& coarse) {
  require(state.grid.dim() == 2 && map.k == 1 && coarse.dim() == 1, ErrorKind::mode_unavailable,
          "grid closure expects a 2D density and k = 1");
  CoefficientField f(coarse);
  f.time = state.time;
  const Axis& cz = coarse.axes[0];
  const int ax = aligned_axis(map);
  const Grid& g = state.grid;
  const int n0 = g.axes[0].n, n1 = g.axes[1].n;
  if (ax >= 0 && g.axes[ax] == cz) {
    const int nc = ax == 0 ? n0 : n1, nf = ax == 0 ? n1 : n0;
    for (int i = 0; i < nc; ++i) {
      double mass = 0.0, bs = 0.0;
      long cnt = 0;
      for (int j = 0; j < nf; ++j) {
        std::size_t id = ax == 0 ? std::size_t(i) * n1 + j : std::size_t(j) * n1 + i;
        double w = state.values[id];
        if (w <= 0.0) continue;
        mass += w;
        bs += w * drift_integrand(pot, map, beta, g.center(id))(0);
        ++cnt;
      }
      f.counts[std::size_t(i)] = mass > 0.0 ? cnt : 0;
      if (mass > 0.0) f.b[std::size_t(i)](0) = bs / mass;
      f.A[std::size_t(i)](0, 0) = 1.0;
    }
  } else {
    for (int i = 0; i < cz.n; ++i) {
      double mass = 0.0, bs = 0.0, as = 0.0;
      long cnt = 0;
      for (const auto& nd : fiber_nodes(map, cz.center(i), g)) {
        double w = nd.w * interp_density(state, nd.q);
        if (w <= 0.0) continue;
        mass += w;
        bs += w * drift_integrand(pot, map, beta, nd.q)(0);
        as += w * map.gram(nd.q)(0, 0);
        ++cnt;
      }
      f.counts[std::size_t(i)] = mass > 0.0 ? cnt : 0;
      if (mass > 0.0) {
        f.b[std::size_t(i)](0) = bs / mass;
        f.A[std::size_t(i)](0, 0) = as / mass;
      }
    }
  }
  f.fill_missing();
  return f;
}

/// Repeated grid closures of one (potential, map) pair: caches the drift integrand per fine cell when the
/// map is coordinate-aligned with the coarse grid, else defers to cg_coefficients.
class GridProjector {
public:
  GridProjector(const Grid& fine, const Potential& pot, const CoarseMap& map, double beta, Grid coarse)
      : pot_(pot), map_(map), beta_(beta), coarse_(std::move(coarse)), axis_(aligned_axis(map)) {
    if (fine.dim() == 2 && axis_ >= 0 && fine.axes[axis_] == coarse_.axes[0]) {
      integrand_.resize(fine.size());
      for (std::size_t i = 0; i < fine.size(); ++i) integrand_[i] = drift_integrand(pot, map, beta, fine.center(i))(0);
    }
  }

  CoefficientField operator()(const GridDensity& state) const {
    if (integrand_.empty()) return cg_coefficients(state, pot_, map_, beta_, coarse_);
    CoefficientField f(coarse_);
    f.time = state.time;
    const int n1 = state.grid.axes[1].n, nc = coarse_.axes[0].n, nf = state.grid.axes[1 - axis_].n;
    for (int i = 0; i < nc; ++i) {
      double mass = 0.0, bs = 0.0;
      long cnt = 0;
      for (int j = 0; j < nf; ++j) {
        const std::size_t id = axis_ == 0 ? std::size_t(i) * n1 + j : std::size_t(j) * n1 + i;
        const double w = state.values[id];
        if (w <= 0.0) continue;
        mass += w, bs += w * integrand_[id], ++cnt;
      }
      f.counts[std::size_t(i)] = mass > 0.0 ? cnt : 0;
      if (mass > 0.0) f.b[std::size_t(i)](0) = bs / mass;
    }
    f.fill_missing();
    return f;
  }

  const Grid& coarse() const { return coarse_; }

private:
  Potential pot_;
  CoarseMap map_;
  double beta_;
  Grid coarse_;
  int axis_;
  std::vector<double> integrand_;
};

/// Bin averages over an ensemble; stderr = sample sd / sqrt(count). Cells below min_count are unoccupied.
inline CoefficientField cg_coefficients(const Ensemble& state, const Potential& pot, const CoarseMap& map, double beta,
                                        const Grid& coarse, long min_count = 10) {
  require(map.k == coarse.dim(), ErrorKind::grid_mismatch, "coarse grid dimension differs from k");
  const int k = map.k;
  CoefficientField f(coarse);
  f.time = state.time;
  f.min_count = min_count;
  const std::size_t n = coarse.size();
  std::vector<Vec> s1(n, Vec::Zero(k)), s2(n, Vec::Zero(k));
  std::vector<Mat> a1(n, Mat::Zero(k, k)), a2(n, Mat::Zero(k, k));
  for (long p = 0; p < state.size(); ++p) {
    const Vec q = state.points.row(p).transpose();
    const Vec z = map.xi(q);
    long id = 0;
    bool inside = true;
    for (int a = 0; a < k; ++a) {
      int c = coarse.axes[a].locate(z(a));
      if (c < 0) inside = false;
      id = id * coarse.axes[a].n + c;
    }
    if (!inside) continue;
    const Vec g = drift_integrand(pot, map, beta, q);
    const Mat G = map.gram(q);
    s1[std::size_t(id)] += g;
    s2[std::size_t(id)] += g.cwiseProduct(g);
    a1[std::size_t(id)] += G;
    a2[std::size_t(id)] += G.cwiseProduct(G);
    ++f.counts[std::size_t(id)];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double c = double(f.counts[i]);
    if (c <= 0) continue;
    f.b[i] = s1[i] / c;
    f.A[i] = a1[i] / c;
    if (c > 1) {
      f.b_se[i] = ((s2[i] / c - f.b[i].cwiseProduct(f.b[i])).cwiseMax(0.0) / (c - 1)).cwiseSqrt();
      f.A_se[i] = ((a2[i] / c - f.A[i].cwiseProduct(f.A[i])).cwiseMax(0.0) / (c - 1)).cwiseSqrt();
    }
  }
  if (k == 1) f.fill_missing();
  return f;
}

struct EffectiveOptions {
  ConditionalOptions cond;
  int batches = 20;  // batch means for standard errors
  int jobs = 1;
  bool langevin = false;  // b(z, v) = E[Dxi grad V] (no Laplacian term), A = T T^T exactly
};

/// Effective coefficients from conditional samples at each cell center of a 1D coarse grid.
inline CoefficientField effective_coefficients(const GibbsMeasure& m, const CoarseMap& map, const Grid& coarse,
                                               long n_per_cell, const EffectiveOptions& opt = {}) {
  require(map.k == 1 && coarse.dim() == 1, ErrorKind::mode_unavailable, "sampled closure implemented for k = 1");
  if (opt.langevin) require(bool(map.affine), ErrorKind::degenerate_map, "Langevin closure needs an affine map");
  CoefficientField f(coarse);
  const std::size_t n = coarse.size();
  std::optional<Ensemble> pool;
  if (!map.affine) {
    ConditionalOptions co = opt.cond;
    co.chain.jobs = opt.jobs;
    pool = sample_gibbs(m, co.gibbs_pool, co.chain, co.lineage);
  }
  const double range = coarse.axes[0].hi - coarse.axes[0].lo;
  parallel_for(n, map.affine ? opt.jobs : 1, [&](std::size_t i) {
    const Vec z = coarse.center(i);
    ConditionalSample cs;
    if (map.affine) {
      ConditionalOptions co = opt.cond;
      co.lineage.substream = std::uint32_t(i);
      co.chain.chains = 1;
      cs = sample_conditional_affine(m, map, z, n_per_cell, co);
    } else {
      double w = opt.cond.bin_width > 0 ? opt.cond.bin_width : 0.05 * range;
      cs = sample_conditional_binned(*pool, map, z, n_per_cell, w);
    }
    const long N = cs.points.rows();
    std::vector<double> gb(static_cast<std::size_t>(N)), ga(static_cast<std::size_t>(N));
    for (long p = 0; p < N; ++p) {
      const Vec q = cs.points.row(p).transpose();
      gb[std::size_t(p)] = opt.langevin ? (map.jac(q) * m.pot.grad(q))(0) : drift_integrand(m.pot, map, m.beta, q)(0);
      ga[std::size_t(p)] = map.gram(q)(0, 0);
    }
    auto batch = [&](const std::vector<double>& x, double& mean, double& se) {
      const int nb = std::max(2, std::min<int>(opt.batches, int(N)));
      const long len = N / nb;
      std::vector<double> bm(std::size_t(nb), 0.0);
      mean = 0.0;
      for (int bI = 0; bI < nb; ++bI) {
        for (long t = 0; t < len; ++t) bm[std::size_t(bI)] += x[std::size_t(bI * len + t)];
        bm[std::size_t(bI)] /= double(len);
        mean += bm[std::size_t(bI)];
      }
      mean /= nb;
      double v = 0.0;
      for (double y : bm) v += (y - mean) * (y - mean);
      se = std::sqrt(v / (nb - 1) / nb);
    };
    double mb, sb, ma, sa;
    batch(gb, mb, sb);
    batch(ga, ma, sa);
    f.b[i](0) = mb;
    f.b_se[i](0) = sb;
    f.A[i](0, 0) = ma;
    f.A_se[i](0, 0) = sa;
    if (opt.langevin) {
      const Mat& T = map.affine->T;
      f.A[i] = T * T.transpose();
      f.A_se[i].setZero();
    }
    f.counts[i] = N;
  });
  return f;
}

/// Effective coefficients by fiber quadrature of the Gibbs density (d = 2, k = 1, charted maps).
inline CoefficientField effective_coefficients_quadrature(const GibbsMeasure& m, const CoarseMap& map,
                                                          const Grid& coarse, const Grid& box) {
  CoefficientField f(coarse);
  const Axis& cz = coarse.axes[0];
  for (int i = 0; i < cz.n; ++i) {
    auto nodes = fiber_nodes(map, cz.center(i), box);
    double vmin = INFINITY;
    for (const auto& nd : nodes) vmin = std::min(vmin, m.pot.eval(nd.q));
    double mass = 0.0, bs = 0.0, as = 0.0;
    for (const auto& nd : nodes) {
      double w = nd.w * std::exp(-m.beta * (m.pot.eval(nd.q) - vmin));
      mass += w;
      bs += w * drift_integrand(m.pot, map, m.beta, nd.q)(0);
      as += w * map.gram(nd.q)(0, 0);
    }
    if (mass > 0.0) {
      f.b[std::size_t(i)](0) = bs / mass;
      f.A[std::size_t(i)](0, 0) = as / mass;
      f.counts[std::size_t(i)] = long(nodes.size());
    }
  }
  f.fill_missing();
  return f;
}

/// log of the unnormalized marginal Gibbs density, log int_{Sigma_z} e^{-beta V} / Jac xi.
inline double log_marginal_gibbs(const GibbsMeasure& m, const CoarseMap& map, double z, const Grid& box) {
  auto nodes = fiber_nodes(map, z, box);
  double vmin = INFINITY;
  for (const auto& nd : nodes) vmin = std::min(vmin, m.pot.eval(nd.q));
  double s = 0.0;
  for (const auto& nd : nodes) s += nd.w * std::exp(-m.beta * (m.pot.eval(nd.q) - vmin));
  return std::log(s) - m.beta * vmin;
}

/// Closed-form effective closure for catalog entries: quadratic potentials with affine maps
/// (Gaussian conditional), and the double well with the q1 coordinate map.
inline std::optional<Closure> analytic_effective_closure(const Potential& pot, const CoarseMap& map) {
  if (pot.quadratic && map.affine) {
    const Mat& T = map.affine->T;
    const Vec tau = map.affine->tau;
    const Mat Kinv = pot.quadratic->inverse();
    const Mat Bm = T * T.transpose() * (T * Kinv * T.transpose()).inverse();
    const Mat A = T * T.transpose();
    Closure c;
    c.k = map.k;
    c.b = [Bm, tau](double, const Vec& z) { return Vec(Bm * (z - tau)); };
    c.A = [A](double, const Vec&) { return A; };
    c.constant_A = true;
    c.label = "analytic";
    return c;
  }
  if (pot.kind == "double_well" && aligned_axis(map) == 0) {
    const double h = pot.param("h"), c2 = pot.param("c") * pot.param("c"), eps = pot.param("eps"),
                 delta = pot.param("delta");
    Closure c;
    c.k = 1;
    c.b = [=](double, const Vec& z) { return Vec::Constant(1, 4.0 * h * z(0) * (z(0) * z(0) - 1.0) - c2 * eps / delta * z(0)); };
    c.A = [](double, const Vec&) { return Mat::Identity(1, 1); };
    c.constant_A = true;
    c.label = "analytic";
    return c;
  }
  return std::nullopt;
}

/// sup over interior occupied cells of |div_z A + beta b + A d_z log mu_hat| (k = 1).
inline double gradient_flow_residual(const CoefficientField& eff, const GridDensity& mu_hat, double beta,
                                     double occupancy = 1e-14) {
  require_same_grid(eff.grid, mu_hat.grid);
  const double h = eff.grid.axes[0].width();
  double r = 0.0;
  for (std::size_t i = 1; i + 1 < eff.size(); ++i) {
    if (mu_hat.values[i - 1] <= occupancy || mu_hat.values[i + 1] <= occupancy || !eff.occupied(i)) continue;
    const double dlog = (std::log(mu_hat.values[i + 1]) - std::log(mu_hat.values[i - 1])) / (2 * h);
    r = std::max(r, std::abs(eff.div_A_at(i) + beta * eff.b[i](0) + eff.A[i](0, 0) * dlog));
  }
  return r;
}

}  // namespace cgbound
