#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/Eigenvalues>

#include "closure.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace cgbound {

/// dX = (-M X + f) dt + noise with covariance rate Q.
struct LinearSde {
  Mat M;
  Mat Q;
  Vec f;

  LinearSde(Mat m, Mat q, Vec off = Vec()) : M(std::move(m)), Q(std::move(q)), f(std::move(off)) {
    if (f.size() == 0) f = Vec::Zero(M.rows());
    require(M.rows() == M.cols() && Q.rows() == M.rows() && Q.cols() == M.rows() && f.size() == M.rows(),
            ErrorKind::config, "linear SDE dimensions do not match");
    require(min_eig(symmetrize(Q)) >= -1e-12, ErrorKind::config, "noise covariance rate must be PSD");
  }
  long dim() const { return M.rows(); }
};

struct GaussianLaw {
  double t = 0.0;
  Vec m;
  Mat S;
};

/// max Re eig(-M); negative means the system is stable.
inline double spectral_abscissa(const Mat& M) {
  Eigen::EigenSolver<Mat> es(-M);
  return es.eigenvalues().real().maxCoeff();
}

namespace detail {

struct Moments {
  Vec m;
  Mat S;
};

inline Moments moment_rhs(const LinearSde& sys, const Moments& x) {
  return {-sys.M * x.m + sys.f, -sys.M * x.S - x.S * sys.M.transpose() + sys.Q};
}

inline Moments axpy(const Moments& x, double h, const Moments& k) { return {x.m + h * k.m, x.S + h * k.S}; }

inline Moments rk4(const LinearSde& sys, const Moments& x, double h) {
  Moments k1 = moment_rhs(sys, x);
  Moments k2 = moment_rhs(sys, axpy(x, h / 2, k1));
  Moments k3 = moment_rhs(sys, axpy(x, h / 2, k2));
  Moments k4 = moment_rhs(sys, axpy(x, h, k3));
  return {x.m + h / 6 * (k1.m + 2 * k2.m + 2 * k3.m + k4.m), x.S + h / 6 * (k1.S + 2 * k2.S + 2 * k3.S + k4.S)};
}

}  // namespace detail

/// Exact Gaussian law propagation (mean ODE and Lyapunov ODE) by RK4 with step doubling.
inline std::vector<GaussianLaw> propagate_moments(const LinearSde& sys, const Vec& m0, const Mat& S0,
                                                  const std::vector<double>& t_grid, double tol = 1e-11) {
  require(m0.size() == sys.dim() && S0.rows() == sys.dim(), ErrorKind::config, "initial law has the wrong dimension");
  require(min_eig(symmetrize(S0)) >= -1e-12, ErrorKind::config, "initial covariance must be PSD");
  detail::Moments x{m0, S0};
  double t = 0.0, h = 1e-2;
  std::vector<GaussianLaw> out;
  for (double target : t_grid) {
    require(target >= t - 1e-15, ErrorKind::config, "time grid must be nondecreasing and start at t >= 0");
    while (t < target - 1e-15) {
      const double step = std::min(h, target - t);
      auto full = detail::rk4(sys, x, step);
      auto half = detail::rk4(sys, detail::rk4(sys, x, step / 2), step / 2);
      const double scale = 1.0 + half.S.cwiseAbs().maxCoeff() + half.m.cwiseAbs().maxCoeff();
      const double err = std::max((full.S - half.S).cwiseAbs().maxCoeff(), (full.m - half.m).cwiseAbs().maxCoeff()) / 15.0;
      if (err <= tol * scale || step < 1e-10) {
        x = {half.m + (half.m - full.m) / 15.0, half.S + (half.S - full.S) / 15.0};
        x.S = symmetrize(x.S);
        t += step;
        if (!x.m.allFinite() || !x.S.allFinite() || x.S.cwiseAbs().maxCoeff() > 1e12)
          throw Error(ErrorKind::numerical, "moment propagation diverged (spectral abscissa " +
                                                std::to_string(spectral_abscissa(sys.M)) + ")");
        if (err < tol * scale / 64) h = std::min(2 * step, 0.25);
      } else {
        h = step / 2;
      }
    }
    out.push_back({t, x.m, x.S});
  }
  return out;
}

/// Stationary covariance: solves M S + S M^T = Q through the Kronecker form.
inline Mat stationary_covariance(const LinearSde& sys) {
  require(spectral_abscissa(sys.M) < 0.0, ErrorKind::numerical, "no stationary law: -M is not stable");
  const long n = sys.dim();
  const Mat I = Mat::Identity(n, n);
  Mat L(n * n, n * n);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j) L.block(i * n, j * n, n, n) = I(i, j) * sys.M + sys.M(i, j) * I;
  // column-major vec: vec(M S) = (I kron M) vec S, vec(S M^T) = (M kron I) vec S
  Vec q = Eigen::Map<const Vec>(sys.Q.data(), n * n);
  Vec s = L.partialPivLu().solve(q);
  return symmetrize(Eigen::Map<Mat>(s.data(), n, n));
}

inline Vec stationary_mean(const LinearSde& sys) { return sys.M.partialPivLu().solve(sys.f); }

/// Law of P X (+ offset) for X ~ law.
inline GaussianLaw push_forward(const GaussianLaw& law, const Mat& P, const Vec& offset = Vec()) {
  Vec m = P * law.m;
  if (offset.size()) m += offset;
  return {law.t, m, symmetrize(P * law.S * P.transpose())};
}

// ---------------------------------------------------------------- systems

/// Overdamped dynamics for V = q^T K q / 2.
inline LinearSde overdamped_system(const Mat& K, double beta) {
  return LinearSde(K, 2.0 / beta * Mat::Identity(K.rows(), K.rows()));
}

/// Langevin dynamics for V = q^T K q / 2, state (q, p), unit mass.
inline LinearSde langevin_system(const Mat& K, double beta, double gamma) {
  const long d = K.rows();
  Mat M = Mat::Zero(2 * d, 2 * d), Q = Mat::Zero(2 * d, 2 * d);
  M.topRightCorner(d, d) = -Mat::Identity(d, d);
  M.bottomLeftCorner(d, d) = K;
  M.bottomRightCorner(d, d) = gamma * Mat::Identity(d, d);
  Q.bottomRightCorner(d, d) = 2.0 * gamma / beta * Mat::Identity(d, d);
  return LinearSde(M, Q);
}

/// Effective overdamped closure dZ = -(B Z + c) dt + sqrt(2 A / beta) dW.
inline LinearSde effective_overdamped_system(const Mat& B, const Vec& c, const Mat& A, double beta) {
  return LinearSde(B, 2.0 / beta * A, -c);
}

/// Effective Langevin closure dZ = V dt, dV = -(B Z + c) dt - gamma V dt + sqrt(2 gamma A / beta) dW.
inline LinearSde effective_langevin_system(const Mat& B, const Vec& c, const Mat& A, double beta, double gamma) {
  const long k = B.rows();
  Mat M = Mat::Zero(2 * k, 2 * k), Q = Mat::Zero(2 * k, 2 * k);
  M.topRightCorner(k, k) = -Mat::Identity(k, k);
  M.bottomLeftCorner(k, k) = B;
  M.bottomRightCorner(k, k) = gamma * Mat::Identity(k, k);
  Q.bottomRightCorner(k, k) = 2.0 * gamma / beta * A;
  Vec f = Vec::Zero(2 * k);
  f.tail(k) = -c;
  return LinearSde(M, Q, f);
}

/// Gibbs law of V = q^T K q / 2: N(0, K^-1 / beta), or in phase space N(0, diag(K^-1, Id) / beta).
inline GaussianLaw gibbs_law(const Mat& K, double beta, bool phase_space) {
  const long d = K.rows();
  if (!phase_space) return {0.0, Vec::Zero(d), K.inverse() / beta};
  Mat S = Mat::Zero(2 * d, 2 * d);
  S.topLeftCorner(d, d) = K.inverse() / beta;
  S.bottomRightCorner(d, d) = Mat::Identity(d, d) / beta;
  return {0.0, Vec::Zero(2 * d), S};
}

// ---------------------------------------------------------------- reference suites

struct ReferencePoint {
  double t = 0.0;
  GaussianLaw coarse, effective;
  double H = 0.0, W2 = 0.0, W2sq = 0.0;
};

struct ReferenceSuite {
  std::vector<ReferencePoint> points;
  double H0_full = 0.0;  // H(rho_0 | mu) of the full initial law
  Mat B;                 // effective drift matrix b(z) = B z + c
  Vec c;
  Mat A;
};

namespace detail {

struct LinearClosure {
  Mat B, A;
  Vec c;
};

inline LinearClosure linear_closure(const Potential& pot, const CoarseMap& map) {
  require(pot.quadratic.has_value() && map.affine.has_value(), ErrorKind::mode_unavailable,
          "Gaussian reference needs a quadratic potential and an affine map");
  auto cl = analytic_effective_closure(pot, map);
  const long k = map.k;
  LinearClosure lc;
  lc.c = cl->b(0.0, Vec::Zero(k));
  lc.B.resize(k, k);
  for (long a = 0; a < k; ++a) lc.B.col(a) = cl->b(0.0, Vec::Unit(k, a)) - lc.c;
  lc.A = cl->A(0.0, Vec::Zero(k));
  return lc;
}

inline ReferenceSuite compare(const std::vector<GaussianLaw>& full, const std::vector<GaussianLaw>& eff, const Mat& P,
                              const Vec& off) {
  ReferenceSuite s;
  for (std::size_t i = 0; i < full.size(); ++i) {
    ReferencePoint r;
    r.t = full[i].t;
    r.coarse = push_forward(full[i], P, off);
    r.effective = eff[i];
    auto g = gaussian_divergences(r.coarse.m, r.coarse.S, r.effective.m, r.effective.S);
    r.H = g.H, r.W2 = g.W2, r.W2sq = g.W2sq;
    s.points.push_back(std::move(r));
  }
  return s;
}

}  // namespace detail

/// Langevin: exact coarse-grained law (marginal of the full phase-space Gaussian under (T q + tau, T p))
/// against the effective Langevin closure started from the same marginal.
inline ReferenceSuite langevin_reference_suite(const Potential& pot, const CoarseMap& map, double beta, double gamma,
                                               const Vec& m0, const Mat& S0, const std::vector<double>& t_grid) {
  auto lc = detail::linear_closure(pot, map);
  const Mat& K = *pot.quadratic;
  const Mat& T = map.affine->T;
  const long d = pot.dim, k = map.k;
  Mat P = Mat::Zero(2 * k, 2 * d);
  P.topLeftCorner(k, d) = T;
  P.bottomRightCorner(k, d) = T;
  Vec off = Vec::Zero(2 * k);
  off.head(k) = map.affine->tau;
  auto full = propagate_moments(langevin_system(K, beta, gamma), m0, S0, t_grid);
  const GaussianLaw init = push_forward({0.0, m0, S0}, P, off);
  auto eff = propagate_moments(effective_langevin_system(lc.B, lc.c, lc.A, beta, gamma), init.m, init.S, t_grid);
  auto s = detail::compare(full, eff, P, off);
  const auto mu = gibbs_law(K, beta, true);
  s.H0_full = gaussian_divergences(m0, S0, mu.m, mu.S).H;
  s.B = lc.B, s.c = lc.c, s.A = lc.A;
  return s;
}

/// Overdamped analogue: marginal of the full OU law under xi against the effective OU closure.
inline ReferenceSuite overdamped_reference_suite(const Potential& pot, const CoarseMap& map, double beta,
                                                 const Vec& m0, const Mat& S0, const std::vector<double>& t_grid) {
  auto lc = detail::linear_closure(pot, map);
  const Mat& K = *pot.quadratic;
  const Mat& T = map.affine->T;
  auto full = propagate_moments(overdamped_system(K, beta), m0, S0, t_grid);
  const GaussianLaw init = push_forward({0.0, m0, S0}, T, map.affine->tau);
  auto eff = propagate_moments(effective_overdamped_system(lc.B, lc.c, lc.A, beta), init.m, init.S, t_grid);
  auto s = detail::compare(full, eff, T, map.affine->tau);
  const auto mu = gibbs_law(K, beta, false);
  s.H0_full = gaussian_divergences(m0, S0, mu.m, mu.S).H;
  s.B = lc.B, s.c = lc.c, s.A = lc.A;
  return s;
}

/// Exact coarse-grained closure of an overdamped Gaussian trajectory (quadratic V, affine xi):
/// b_hat(t, z) = T K E[q | xi(q) = z] under the law at t, linear in t between the given laws; A = T T^T.
inline Closure gaussian_cg_closure(const Potential& pot, const CoarseMap& map, const std::vector<GaussianLaw>& laws) {
  require(pot.quadratic.has_value() && map.affine.has_value(), ErrorKind::mode_unavailable,
          "Gaussian closure needs a quadratic potential and an affine map");
  require(!laws.empty(), ErrorKind::config, "empty law sequence");
  const Mat& K = *pot.quadratic;
  const Mat& T = map.affine->T;
  const Vec tau = map.affine->tau;
  struct Affine {
    double t;
    Mat B;
    Vec c;
  };
  auto table = std::make_shared<std::vector<Affine>>();
  for (const auto& law : laws) {
    const Mat gain = law.S * T.transpose() * (T * law.S * T.transpose()).inverse();
    // E[q | z] = m + gain (z - tau - T m)
    const Mat B = T * K * gain;
    const Vec c = T * K * (law.m - gain * (tau + T * law.m));
    table->push_back({law.t, B, c});
  }
  Closure cl;
  cl.k = map.k;
  cl.b = [table](double t, const Vec& z) {
    const auto& v = *table;
    if (v.size() == 1 || t <= v.front().t) return Vec(v.front().B * z + v.front().c);
    if (t >= v.back().t) return Vec(v.back().B * z + v.back().c);
    auto it = std::upper_bound(v.begin(), v.end(), t, [](double x, const Affine& a) { return x < a.t; });
    const Affine &hi = *it, &lo = *(it - 1);
    const double f = (t - lo.t) / (hi.t - lo.t);
    return Vec((1 - f) * (lo.B * z + lo.c) + f * (hi.B * z + hi.c));
  };
  const Mat A = T * T.transpose();
  cl.A = [A](double, const Vec&) { return A; };
  cl.constant_A = true;
  cl.label = "gaussian-coarse-grained";
  return cl;
}

}  // namespace cgbound
