#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "expr.hpp"
#include "grid.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace cgbound {

using ScalarFn = std::function<double(const Vec&)>;
using VecFn = std::function<Vec(const Vec&)>;
using MatFn = std::function<Mat(const Vec&)>;

/// V = fast / eps + slow, with the coarse map constant along grad(fast).
struct ScaleSplit {
  ScalarFn fast, slow;
  VecFn fast_grad;
  double eps = 1.0;
};

/// Declared growth constant C: |V| <= C(1+|q|^2), |grad V| <= C(1+|q|), |D^2 V| <= C.
struct GrowthCertificate {
  double C = 0.0;
};

/// Potential energy with exact derivatives.
struct Potential {
  int dim = 0;
  ScalarFn eval;
  VecFn grad;
  MatFn hess;
  std::optional<ScaleSplit> split;
  std::optional<GrowthCertificate> growth;
  /// Catalog name ("quadratic", "coupled_quadratic", "double_well", "expr") and parameters.
  std::string kind;
  std::map<std::string, double> params;
  /// Constant Hessian for quadratic catalog entries (V = q^T K q / 2).
  std::optional<Mat> quadratic;

  double param(const std::string& key) const {
    auto it = params.find(key);
    require(it != params.end(), ErrorKind::config, "potential parameter '" + key + "' missing");
    return it->second;
  }
};

/// Affine coarse map xi(q) = T q + tau.
struct AffineData {
  Mat T;
  Vec tau;
};

/// Parametrization of a 1D fiber in the plane (d = 2, k = 1): q = point(z, s),
/// with weight(z, s) = (line element) / Jac xi so that fiber integrals are plain s-integrals.
struct FiberChart {
  std::function<Vec(double, double)> point;
  std::function<double(double, double)> weight;
  /// Parameter range of the fiber inside the box [lo0,hi0] x [lo1,hi1]; empty interval when disjoint.
  std::function<std::pair<double, double>(double, const Grid&)> range;
};

/// Coarse-graining map xi: R^d -> R^k.
struct CoarseMap {
  int d = 0, k = 0;
  VecFn xi;
  MatFn jac;
  /// One d x d Hessian per component.
  std::function<std::vector<Mat>(const Vec&)> hess;
  std::optional<AffineData> affine;
  std::optional<FiberChart> chart;
  std::string kind;

  Vec lap(const Vec& q) const {
    Vec l(k);
    if (affine) return Vec::Zero(k);
    auto h = hess(q);
    for (int a = 0; a < k; ++a) l(a) = h[a].trace();
    return l;
  }
  Mat gram(const Vec& q) const {
    Mat j = jac(q);
    return j * j.transpose();
  }
};

/// Phase-space lift (q, p) -> (xi(q), Dxi p); only affine bases are admitted.
struct PhaseMap {
  CoarseMap base;
  explicit PhaseMap(CoarseMap m) : base(std::move(m)) {
    if (!base.affine) throw Error(ErrorKind::degenerate_map, "phase-space map requires an affine coarse map");
  }
  Vec operator()(const Vec& q, const Vec& p) const {
    Vec out(2 * base.k);
    out.head(base.k) = base.affine->T * q + base.affine->tau;
    out.tail(base.k) = base.affine->T * p;
    return out;
  }
};

struct GibbsMeasure {
  Potential pot;
  double beta = 1.0;
  mutable std::optional<double> logZ;

  GibbsMeasure(Potential p, double b) : pot(std::move(p)), beta(b) {
    if (!(beta > 0.0)) throw ConfigError("physics.beta", "must be positive");
  }

  /// Discrete Gibbs law on a grid (cell-center evaluation).
  GridDensity on_grid(const Grid& g) const {
    return GridDensity::from_log(g, [&](const Vec& q) { return -beta * pot.eval(q); });
  }
};

// ---------------------------------------------------------------- catalog

namespace catalog {

/// V = q^T K q / 2.
inline Potential quadratic(const Mat& K) {
  Potential p;
  p.dim = int(K.rows());
  Mat Ks = symmetrize(K);
  p.eval = [Ks](const Vec& q) { return 0.5 * q.dot(Ks * q); };
  p.grad = [Ks](const Vec& q) { return Vec(Ks * q); };
  p.hess = [Ks](const Vec&) { return Ks; };
  p.kind = "quadratic";
  p.quadratic = Ks;
  p.growth = GrowthCertificate{Ks.cwiseAbs().maxCoeff() * p.dim + 1.0};
  return p;
}

/// V = a q1^2/2 + delta q2^2/(2 eps) + c q1 q2, split as fast = delta q2^2/2.
inline Potential coupled_quadratic(double eps, double c, double a = 1.0, double delta = 1.0) {
  if (!(eps > 0.0)) throw ConfigError("physics.eps", "must be positive");
  if (!(a * delta / eps > c * c)) throw ConfigError("physics.c", "potential is not confining (need a*delta/eps > c^2)");
  Potential p;
  p.dim = 2;
  ScaleSplit s;
  s.eps = eps;
  s.fast = [delta](const Vec& q) { return 0.5 * delta * q(1) * q(1); };
  s.slow = [a, c](const Vec& q) { return 0.5 * a * q(0) * q(0) + c * q(0) * q(1); };
  s.fast_grad = [delta](const Vec& q) { return Vec((Vec(2) << 0.0, delta * q(1)).finished()); };
  auto fast = s.fast, slow = s.slow;
  p.eval = [fast, slow, eps](const Vec& q) { return fast(q) / eps + slow(q); };
  p.grad = [=](const Vec& q) { return Vec((Vec(2) << a * q(0) + c * q(1), delta * q(1) / eps + c * q(0)).finished()); };
  Mat K(2, 2);
  K << a, c, c, delta / eps;
  p.hess = [K](const Vec&) { return K; };
  p.split = s;
  p.kind = "coupled_quadratic";
  p.params = {{"eps", eps}, {"c", c}, {"a", a}, {"delta", delta}};
  p.quadratic = K;
  p.growth = GrowthCertificate{2.0 * (std::abs(a) + std::abs(c) + delta / eps) + 1.0};
  return p;
}

/// V = h (q1^2 - 1)^2 + delta q2^2/(2 eps) + c q1 q2.
inline Potential double_well(double eps, double c, double h = 1.0, double delta = 1.0) {
  if (!(eps > 0.0)) throw ConfigError("physics.eps", "must be positive");
  Potential p;
  p.dim = 2;
  ScaleSplit s;
  s.eps = eps;
  s.fast = [delta](const Vec& q) { return 0.5 * delta * q(1) * q(1); };
  s.slow = [h, c](const Vec& q) {
    double w = q(0) * q(0) - 1.0;
    return h * w * w + c * q(0) * q(1);
  };
  s.fast_grad = [delta](const Vec& q) { return Vec((Vec(2) << 0.0, delta * q(1)).finished()); };
  auto fast = s.fast, slow = s.slow;
  p.eval = [fast, slow, eps](const Vec& q) { return fast(q) / eps + slow(q); };
  p.grad = [=](const Vec& q) {
    return Vec((Vec(2) << 4.0 * h * q(0) * (q(0) * q(0) - 1.0) + c * q(1), delta * q(1) / eps + c * q(0)).finished());
  };
  p.hess = [=](const Vec& q) {
    Mat H(2, 2);
    H << h * (12.0 * q(0) * q(0) - 4.0), c, c, delta / eps;
    return H;
  };
  p.split = s;
  p.kind = "double_well";
  p.params = {{"eps", eps}, {"c", c}, {"h", h}, {"delta", delta}};
  return p;
}

/// Potential from the expression grammar.
inline Potential expression(const std::string& text, int dim) {
  auto e = std::make_shared<Expr>(text, dim);
  Potential p;
  p.dim = dim;
  p.eval = [e](const Vec& q) { return e->value(q); };
  p.grad = [e](const Vec& q) { return e->gradient(q); };
  p.hess = [e](const Vec& q) { return e->hessian(q); };
  p.kind = "expr";
  return p;
}

/// xi(q) = T q + tau.
inline CoarseMap affine(const Mat& T, const Vec& tau) {
  CoarseMap m;
  m.d = int(T.cols());
  m.k = int(T.rows());
  require(m.k < m.d, ErrorKind::degenerate_map, "coarse map needs k < d");
  require(Eigen::FullPivLU<Mat>(T).rank() == m.k, ErrorKind::degenerate_map, "affine map T must have full rank");
  m.xi = [T, tau](const Vec& q) { return Vec(T * q + tau); };
  m.jac = [T](const Vec&) { return T; };
  int d = m.d, k = m.k;
  m.hess = [d, k](const Vec&) { return std::vector<Mat>(k, Mat::Zero(d, d)); };
  m.affine = AffineData{T, tau};
  m.kind = "affine";
  if (m.d == 2 && m.k == 1) {
    const double nt = T.norm();
    Vec n = T.row(0).transpose() / nt;
    Vec e(2);
    e << -n(1), n(0);
    const double t0 = tau(0);
    FiberChart ch;
    ch.point = [n, e, nt, t0](double z, double s) { return Vec(n * ((z - t0) / nt) + s * e); };
    ch.weight = [nt](double, double) { return 1.0 / nt; };
    ch.range = [n, e, nt, t0](double z, const Grid& g) {
      // clip the line base + s e against the box
      Vec base = n * ((z - t0) / nt);
      double lo = -INFINITY, hi = INFINITY;
      for (int a = 0; a < 2; ++a) {
        const Axis& ax = g.axes[a];
        if (std::abs(e(a)) < 1e-15) {
          if (base(a) < ax.lo || base(a) > ax.hi) return std::pair<double, double>{0.0, 0.0};
          continue;
        }
        double s1 = (ax.lo - base(a)) / e(a), s2 = (ax.hi - base(a)) / e(a);
        lo = std::max(lo, std::min(s1, s2));
        hi = std::min(hi, std::max(s1, s2));
      }
      if (hi < lo) return std::pair<double, double>{0.0, 0.0};
      return std::pair<double, double>{lo, hi};
    };
    m.chart = ch;
  }
  return m;
}

/// xi(q) = q_index (0-based).
inline CoarseMap coordinate(int d, int index = 0) {
  Mat T = Mat::Zero(1, d);
  T(0, index) = 1.0;
  auto m = affine(T, Vec::Zero(1));
  m.kind = "coordinate";
  return m;
}

/// xi(q) = cos(theta) q1 + sin(theta) q2.
inline CoarseMap rotated(double theta) {
  Mat T(1, 2);
  T << std::cos(theta), std::sin(theta);
  auto m = affine(T, Vec::Zero(1));
  m.kind = "rotated";
  return m;
}

/// Graph map xi(q) = q1 + phi(q2), described by phi, phi', phi''.
inline CoarseMap graph(std::function<double(double)> phi, std::function<double(double)> dphi,
                       std::function<double(double)> ddphi, std::string kind) {
  CoarseMap m;
  m.d = 2;
  m.k = 1;
  m.xi = [phi](const Vec& q) { return Vec::Constant(1, q(0) + phi(q(1))); };
  m.jac = [dphi](const Vec& q) {
    Mat j(1, 2);
    j << 1.0, dphi(q(1));
    return j;
  };
  m.hess = [ddphi](const Vec& q) {
    Mat h = Mat::Zero(2, 2);
    h(1, 1) = ddphi(q(1));
    return std::vector<Mat>{h};
  };
  FiberChart ch;
  ch.point = [phi](double z, double s) { return Vec((Vec(2) << z - phi(s), s).finished()); };
  // line element sqrt(1 + phi'^2) cancels against Jac xi = |grad xi|
  ch.weight = [](double, double) { return 1.0; };
  ch.range = [](double, const Grid& g) { return std::pair<double, double>{g.axes[1].lo, g.axes[1].hi}; };
  m.chart = ch;
  m.kind = std::move(kind);
  return m;
}

/// xi(q) = q1 + a tanh(q2).
inline CoarseMap tanh_graph(double a) {
  auto m = graph([a](double s) { return a * std::tanh(s); },
                 [a](double s) {
                   double c = 1.0 / std::cosh(s);
                   return a * c * c;
                 },
                 [a](double s) {
                   double c = 1.0 / std::cosh(s);
                   return -2.0 * a * c * c * std::tanh(s);
                 },
                 "tanh_graph");
  return m;
}

/// xi(q) = q1 + a q2^2; not affine at infinity.
inline CoarseMap parabola_graph(double a) {
  return graph([a](double s) { return a * s * s; }, [a](double s) { return 2.0 * a * s; },
               [a](double) { return 2.0 * a; }, "parabola_graph");
}

/// Scalar map from the expression grammar.
inline CoarseMap expression_map(const std::string& text, int d) {
  auto e = std::make_shared<Expr>(text, d);
  CoarseMap m;
  m.d = d;
  m.k = 1;
  m.xi = [e](const Vec& q) { return Vec::Constant(1, e->value(q)); };
  m.jac = [e](const Vec& q) { return Mat(e->gradient(q).transpose()); };
  m.hess = [e](const Vec& q) { return std::vector<Mat>{e->hessian(q)}; };
  m.kind = "expr";
  return m;
}

}  // namespace catalog

// ---------------------------------------------------------------- operations

inline constexpr double kDegenerateRcond = 1e-10;

inline Mat checked_gram_inverse(const Mat& G) {
  if (rcond_sym(G) < kDegenerateRcond)
    throw Error(ErrorKind::degenerate_map, "Dxi Dxi^T is singular (reciprocal condition number below 1e-10)");
  return G.inverse();
}

/// Divergence of the k x d field G^{-1} Dxi, one entry per coarse component.
inline Vec div_ginv_jac(const CoarseMap& map, const Vec& q) {
  if (map.affine) return Vec::Zero(map.k);
  const Mat J = map.jac(q);
  const Mat Gi = checked_gram_inverse(J * J.transpose());
  const auto H = map.hess(q);
  Vec out = Vec::Zero(map.k);
  for (int j = 0; j < map.d; ++j) {
    Mat dJ(map.k, map.d);  // d/dq_j of Dxi
    for (int b = 0; b < map.k; ++b) dJ.row(b) = H[b].col(j).transpose();
    Mat dG = dJ * J.transpose() + J * dJ.transpose();
    Mat dM = -Gi * dG * Gi * J + Gi * dJ;
    out += dM.col(j);
  }
  return out;
}

/// F = G^{-1} Dxi grad V - beta^{-1} div(G^{-1} Dxi).
inline Vec local_mean_force(const Potential& pot, const CoarseMap& map, double beta, const Vec& q) {
  const Mat J = map.jac(q);
  const Mat Gi = checked_gram_inverse(J * J.transpose());
  Vec f = Gi * (J * pot.grad(q));
  if (!map.affine) f -= div_ginv_jac(map, q) / beta;
  return f;
}

/// Integrand of the drift closures: Dxi grad V - beta^{-1} Lap xi.
inline Vec drift_integrand(const Potential& pot, const CoarseMap& map, double beta, const Vec& q) {
  Vec v = map.jac(q) * pot.grad(q);
  if (!map.affine) v -= map.lap(q) / beta;
  return v;
}

struct AffineAtInfinity {
  Mat T_est;
  double C_est = 0.0;
  bool pass = false;
  std::vector<double> residual;  // sup |Dxi - T_est| per radius
  double hess_decay_exponent = 0.0;  // fitted p in |D^2 xi| ~ (1+|q|)^{-p}
  bool c3_on_box = false;            // sup |D^2 xi|(1+|q|^2) nonincreasing across radii
};

/// Samples Dxi on spheres of the given radii; the limit matrix is the componentwise median at the
/// largest radius, C_xi the sup of |Dxi - T_est|(1+|q|), and the test passes iff the per-radius
/// deviation sup |Dxi - T_est| is nonincreasing.
inline AffineAtInfinity check_affine_at_infinity(const CoarseMap& map, const std::vector<double>& radii,
                                                 int n_dirs = 256, std::uint64_t seed = 0) {
  for (std::size_t i = 1; i < radii.size(); ++i)
    require(radii[i] > radii[i - 1], ErrorKind::config, "radii must be strictly increasing");
  require(!radii.empty(), ErrorKind::config, "need at least one radius");
  RandomStream rs(seed, streams::constants, 0xA11u);
  std::vector<Vec> dirs;
  for (int i = 0; i < n_dirs; ++i) {
    Vec u = rs.normal_vec(map.d);
    dirs.push_back(u / u.norm());
  }
  AffineAtInfinity out;
  const double R = radii.back();
  Mat T(map.k, map.d);
  for (int a = 0; a < map.k; ++a)
    for (int b = 0; b < map.d; ++b) {
      std::vector<double> vals;
      for (const auto& u : dirs) vals.push_back(map.jac(R * u)(a, b));
      std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
      T(a, b) = vals[vals.size() / 2];
    }
  out.T_est = T;
  std::vector<double> hsup;
  std::vector<double> c3;
  for (double r : radii) {
    double dev = 0.0, hs = 0.0;
    for (const auto& u : dirs) {
      Vec q = r * u;
      double e = op_norm(map.jac(q) - T);
      dev = std::max(dev, e);
      out.C_est = std::max(out.C_est, e * (1.0 + r));
      double hn = 0.0;
      for (const auto& h : map.hess(q)) hn += h.squaredNorm();
      hs = std::max(hs, std::sqrt(hn));
    }
    out.residual.push_back(dev);
    hsup.push_back(hs);
    c3.push_back(hs * (1.0 + r * r));
  }
  out.pass = true;
  for (std::size_t i = 1; i < radii.size(); ++i)
    if (out.residual[i] > out.residual[i - 1] + 1e-12) out.pass = false;
  out.c3_on_box = true;
  for (std::size_t i = 1; i < radii.size(); ++i)
    if (c3[i] > c3[i - 1] * (1.0 + 1e-9) + 1e-12) out.c3_on_box = false;
  // least-squares slope of log sup|D^2 xi| against log(1+r), over radii with nonzero Hessian
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    if (hsup[i] <= 1e-300) continue;
    double x = std::log1p(radii[i]), y = std::log(hsup[i]);
    sx += x, sy += y, sxx += x * x, sxy += x * y, ++n;
  }
  if (n >= 2) out.hess_decay_exponent = -(n * sxy - sx * sy) / (n * sxx - sx * sx);
  else out.hess_decay_exponent = INFINITY;
  return out;
}

/// Z_M^{-1} min{max{f0, 1/M}, M} renormalized against mu (cell masses).
inline std::vector<double> truncate_density(const std::vector<double>& f0, const GridDensity& mu, double M) {
  if (!(M > 1.0)) throw ConfigError("M", "truncation level must exceed 1");
  require(f0.size() == mu.values.size(), ErrorKind::grid_mismatch, "relative density and mu differ in size");
  std::vector<double> out(f0.size());
  double z = 0.0;
  for (std::size_t i = 0; i < f0.size(); ++i) {
    require(f0[i] >= 0.0, ErrorKind::numerical, "relative density must be nonnegative");
    out[i] = std::min(std::max(f0[i], 1.0 / M), M);
    z += out[i] * mu.values[i];
  }
  for (auto& x : out) x /= z;
  return out;
}

// ---------------------------------------------------------------- validation

struct DerivativeCheck {
  double max_rel_error = 0.0;
  bool pass = false;
};

inline double rel_err(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

/// Centered finite differences of eval against grad and of grad against hess, at points drawn
/// uniformly in [-radius, radius]^d.
inline DerivativeCheck check_potential_derivatives(const Potential& p, double radius, int n_points = 64,
                                                   std::uint64_t seed = 0, double tol = 1e-6) {
  RandomStream rs(seed, streams::constants, 0xD1u);
  DerivativeCheck out;
  for (int s = 0; s < n_points; ++s) {
    Vec q(p.dim);
    for (int i = 0; i < p.dim; ++i) q(i) = radius * (2.0 * rs.uniform() - 1.0);
    Vec g = p.grad(q);
    Vec gfd(p.dim);
    Mat hfd(p.dim, p.dim);
    for (int i = 0; i < p.dim; ++i) {
      double h = 1e-5 * std::max(1.0, std::abs(q(i)));
      Vec qp = q, qm = q;
      qp(i) += h;
      qm(i) -= h;
      gfd(i) = (p.eval(qp) - p.eval(qm)) / (2.0 * h);
      hfd.col(i) = (p.grad(qp) - p.grad(qm)) / (2.0 * h);
    }
    out.max_rel_error = std::max({out.max_rel_error, rel_err(g, gfd), rel_err(p.hess(q), symmetrize(hfd))});
  }
  out.pass = out.max_rel_error <= tol;
  return out;
}

struct MapCheck {
  double max_rel_error = 0.0;  // jac vs finite differences of xi
  double min_gram_eig = INFINITY;  // C2: Dxi Dxi^T >= C^{-1} Id
  bool affine_exact = true;
  bool pass = false;
};

inline MapCheck check_map(const CoarseMap& m, double radius, double C = 1e6, int n_points = 64, std::uint64_t seed = 0,
                          double tol = 1e-6) {
  RandomStream rs(seed, streams::constants, 0xD2u);
  MapCheck out;
  for (int s = 0; s < n_points; ++s) {
    Vec q(m.d);
    for (int i = 0; i < m.d; ++i) q(i) = radius * (2.0 * rs.uniform() - 1.0);
    Mat J = m.jac(q);
    Mat jfd(m.k, m.d);
    for (int i = 0; i < m.d; ++i) {
      double h = 1e-5 * std::max(1.0, std::abs(q(i)));
      Vec qp = q, qm = q;
      qp(i) += h;
      qm(i) -= h;
      jfd.col(i) = (m.xi(qp) - m.xi(qm)) / (2.0 * h);
    }
    out.max_rel_error = std::max(out.max_rel_error, rel_err(J, jfd));
    out.min_gram_eig = std::min(out.min_gram_eig, min_eig(J * J.transpose()));
    if (m.affine) {
      const auto& A = *m.affine;
      bool hz = true;
      for (const auto& h : m.hess(q)) hz = hz && h.isZero(0.0);
      if (!(m.xi(q) == Vec(A.T * q + A.tau)) || !(J == A.T) || !hz) out.affine_exact = false;
    }
  }
  out.pass = out.max_rel_error <= tol && out.min_gram_eig >= 1.0 / C && out.affine_exact;
  return out;
}

/// Max over sampled points of |Dxi grad V0| (zero for a valid scale split).
inline double scale_split_residual(const Potential& p, const CoarseMap& m, double radius, int n_points = 64,
                                   std::uint64_t seed = 0) {
  if (!p.split) return 0.0;
  RandomStream rs(seed, streams::constants, 0xD3u);
  double r = 0.0;
  for (int s = 0; s < n_points; ++s) {
    Vec q(p.dim);
    for (int i = 0; i < p.dim; ++i) q(i) = radius * (2.0 * rs.uniform() - 1.0);
    r = std::max(r, (m.jac(q) * p.split->fast_grad(q)).norm());
  }
  return r;
}

/// Sampled check of a declared growth certificate on a box of the given radius.
inline bool check_growth(const Potential& p, double radius = 1e3, int n_points = 256, std::uint64_t seed = 0) {
  if (!p.growth) return false;
  const double C = p.growth->C;
  RandomStream rs(seed, streams::constants, 0xD4u);
  for (int s = 0; s < n_points; ++s) {
    Vec q(p.dim);
    for (int i = 0; i < p.dim; ++i) q(i) = radius * (2.0 * rs.uniform() - 1.0);
    double r2 = q.squaredNorm();
    if (std::abs(p.eval(q)) > C * (1.0 + r2)) return false;
    if (p.grad(q).norm() > C * (1.0 + std::sqrt(r2))) return false;
    if (op_norm(p.hess(q)) > C) return false;
  }
  return true;
}

/// Quadrature convergence of log Z on a 2D box (grids n and 2n per axis).
inline bool gibbs_integrable(const GibbsMeasure& m, const Grid& box, double rtol = 1e-3) {
  auto logz = [&](int n) {
    Grid g = box;
    for (auto& a : g.axes) a.n = n;
    double mx = -INFINITY;
    std::vector<double> lv(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) mx = std::max(mx, lv[i] = -m.beta * m.pot.eval(g.center(i)));
    double s = 0.0;
    for (double x : lv) s += std::exp(x - mx);
    return mx + std::log(s * g.cell_volume());
  };
  double a = logz(box.axes[0].n), b = logz(2 * box.axes[0].n);
  bool ok = std::isfinite(a) && std::isfinite(b) && std::abs(a - b) <= rtol * std::max(1.0, std::abs(b));
  if (ok) m.logZ = b;
  return ok;
}

}  // namespace cgbound
