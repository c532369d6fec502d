#pragma once

#include <Eigen/SparseLU>
#include <Eigen/SparseCore>

#include <cmath>
#include <functional>
#include <vector>

#include "coeffs.hpp"
#include "errors.hpp"
#include "grid.hpp"
#include "model.hpp"

namespace cgbound {

/// B(x) = x / (e^x - 1), B(0) = 1.
inline double bernoulli(double x) {
  if (std::abs(x) < 1e-10) return 1.0 - 0.5 * x;
  return x / std::expm1(x);
}

/// Linear finite-volume generator written as face fluxes: flux from cell L to cell R is
/// a * m_L - b * m_R (masses per cell, per unit time).
struct FaceOperator {
  std::vector<std::size_t> left, right;
  std::vector<double> a, b;

  void add(std::size_t l, std::size_t r, double al, double br) {
    left.push_back(l);
    right.push_back(r);
    a.push_back(al);
    b.push_back(br);
  }
  double max_out_rate(std::size_t n) const {
    std::vector<double> out(n, 0.0);
    for (std::size_t f = 0; f < a.size(); ++f) {
      out[left[f]] += a[f];
      out[right[f]] += b[f];
    }
    return *std::max_element(out.begin(), out.end());
  }
  void explicit_step(std::vector<double>& m, double dt, std::vector<double>& scratch) const {
    scratch = m;
    for (std::size_t f = 0; f < a.size(); ++f) {
      double flux = dt * (a[f] * m[left[f]] - b[f] * m[right[f]]);
      scratch[left[f]] -= flux;
      scratch[right[f]] += flux;
    }
    m.swap(scratch);
  }
  /// Semi-discrete entropy dissipation -dH(m|mu)/dt = sum_f flux_f (log(m/mu)_L - log(m/mu)_R);
  /// nonnegative when mu is the operator's detailed-balance state. Faces touching empty cells are skipped.
  double dissipation(const std::vector<double>& m, const std::vector<double>& mu) const {
    thread_local std::vector<double> u;
    u.resize(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) u[i] = m[i] > 0.0 ? std::log(m[i] / mu[i]) : 0.0;
    double s = 0.0;
    for (std::size_t f = 0; f < a.size(); ++f) {
      const double ml = m[left[f]], mr = m[right[f]];
      if (ml <= 0.0 || mr <= 0.0) continue;
      s += (a[f] * ml - b[f] * mr) * (u[left[f]] - u[right[f]]);
    }
    return s;
  }
  Eigen::SparseMatrix<double> implicit_matrix(std::size_t n, double dt) const {
    std::vector<Eigen::Triplet<double>> t;
    for (std::size_t i = 0; i < n; ++i) t.emplace_back(long(i), long(i), 1.0);
    for (std::size_t f = 0; f < a.size(); ++f) {
      const long l = long(left[f]), r = long(right[f]);
      t.emplace_back(l, l, dt * a[f]);
      t.emplace_back(l, r, -dt * b[f]);
      t.emplace_back(r, l, -dt * a[f]);
      t.emplace_back(r, r, dt * b[f]);
    }
    Eigen::SparseMatrix<double> M(static_cast<long>(n), static_cast<long>(n));
    M.setFromTriplets(t.begin(), t.end());
    return M;
  }
};

/// Scharfetter-Gummel fluxes for d_t rho = div(rho grad V) + beta^{-1} Lap rho on a 1D or 2D grid.
inline FaceOperator overdamped_operator(const Potential& pot, double beta, const Grid& g) {
  FaceOperator op;
  const double D = 1.0 / beta;
  std::vector<double> V(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) V[i] = pot.eval(g.center(i));
  auto face = [&](std::size_t l, std::size_t r, double h) {
    const double d = beta * (V[r] - V[l]);
    const double c = D / (h * h);
    op.add(l, r, c * bernoulli(d), c * bernoulli(-d));
  };
  if (g.dim() == 1) {
    for (int i = 0; i + 1 < g.axes[0].n; ++i) face(std::size_t(i), std::size_t(i + 1), g.axes[0].width());
  } else {
    const int n0 = g.axes[0].n, n1 = g.axes[1].n;
    for (int i = 0; i < n0; ++i)
      for (int j = 0; j < n1; ++j) {
        std::size_t id = std::size_t(i) * n1 + j;
        if (i + 1 < n0) face(id, id + n1, g.axes[0].width());
        if (j + 1 < n1) face(id, id + 1, g.axes[1].width());
      }
  }
  return op;
}

/// Exponentially fitted fluxes for d_t rho = d_z(b rho + beta^{-1} d_z(A rho)) (k = 1), with u = A rho.
inline FaceOperator coarse_operator(const std::vector<double>& b, const std::vector<double>& A, double beta,
                                    const Axis& ax) {
  FaceOperator op;
  const double h = ax.width(), c = 1.0 / (beta * h * h);
  for (int i = 0; i + 1 < ax.n; ++i) {
    const double bf = 0.5 * (b[i] + b[i + 1]), Af = 0.5 * (A[i] + A[i + 1]);
    const double d = h * beta * bf / Af;
    op.add(std::size_t(i), std::size_t(i + 1), c * bernoulli(d) * A[i], c * bernoulli(-d) * A[i + 1]);
  }
  return op;
}

struct FpOptions {
  double dt = 0.0;  // 0 selects the largest stable step (times safety)
  int n_out = 10;   // stored frames besides t = 0
  bool implicit = false;
  double safety = 0.9;
  double leak_tol = 1e-8;  // max mass allowed in the outer ring of cells
  /// Called at t = 0 and after every step.
  std::function<void(long, const GridDensity&)> observer;
};

struct FpTrajectory {
  std::vector<GridDensity> frames;
  double dt = 0.0;
  long steps = 0;
  double max_boundary_mass = 0.0;
};

inline double boundary_mass(const GridDensity& d) {
  const Grid& g = d.grid;
  double s = 0.0;
  if (g.dim() == 1) return d.values.front() + d.values.back();
  const int n0 = g.axes[0].n, n1 = g.axes[1].n;
  for (int i = 0; i < n0; ++i)
    for (int j = 0; j < n1; ++j)
      if (i == 0 || j == 0 || i == n0 - 1 || j == n1 - 1) s += d.values[std::size_t(i) * n1 + j];
  return s;
}

namespace detail {

/// Picks dt and the number of steps so that steps is a multiple of n_out and dt * steps = t_end.
inline void plan_steps(double t_end, double dt_req, double dt_max, int n_out, bool implicit, double& dt, long& steps) {
  require(t_end > 0.0, ErrorKind::config, "t_end must be positive");
  if (dt_req > 0.0) {
    if (!implicit && dt_req > dt_max * (1.0 + 1e-12))
      throw Error(ErrorKind::step_size, "dt " + std::to_string(dt_req) + " exceeds the stable limit " +
                                            std::to_string(dt_max));
    steps = std::max<long>(1, std::lround(t_end / dt_req));
  } else {
    steps = long(std::ceil(t_end / dt_max));
  }
  steps = ((steps + n_out - 1) / n_out) * n_out;
  dt = t_end / double(steps);
  if (!implicit && dt > dt_max * (1.0 + 1e-12))
    throw Error(ErrorKind::step_size, "dt exceeds the stable limit");
}

inline void check_leak(const GridDensity& d, double tol, double& worst) {
  double bm = boundary_mass(d);
  worst = std::max(worst, bm);
  if (bm > tol)
    throw Error(ErrorKind::box_too_small,
                "boundary mass " + fmt_num(bm) + " exceeds " + fmt_num(tol) + "; enlarge the box");
}

}  // namespace detail

/// Runs a time-independent face operator.
inline FpTrajectory run_operator(const FaceOperator& op, const GridDensity& rho0, double t_end, const FpOptions& opt) {
  require(rho0.valid(1e-10), ErrorKind::numerical, "initial density is not a valid probability vector");
  const std::size_t n = rho0.values.size();
  FpTrajectory tr;
  const double dt_max = opt.safety / op.max_out_rate(n);
  detail::plan_steps(t_end, opt.dt, dt_max, opt.n_out, opt.implicit, tr.dt, tr.steps);
  GridDensity cur = rho0;
  cur.time = rho0.time;
  const double t0 = rho0.time;
  detail::check_leak(cur, opt.leak_tol, tr.max_boundary_mass);
  tr.frames.push_back(cur);
  if (opt.observer) opt.observer(0, cur);
  std::vector<double> scratch;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  if (opt.implicit) {
    auto M = op.implicit_matrix(n, tr.dt);
    lu.analyzePattern(M);
    lu.factorize(M);
    require(lu.info() == Eigen::Success, ErrorKind::numerical, "implicit factorization failed");
  }
  const long every = tr.steps / opt.n_out;
  for (long s = 1; s <= tr.steps; ++s) {
    if (opt.implicit) {
      Eigen::Map<Vec> m(cur.values.data(), long(n));
      Vec next = lu.solve(m);
      for (std::size_t i = 0; i < n; ++i) cur.values[i] = std::max(next(long(i)), 0.0);
    } else {
      op.explicit_step(cur.values, tr.dt, scratch);
    }
    cur.time = t0 + tr.dt * double(s);
    if (opt.observer) opt.observer(s, cur);
    if (s % every == 0) {
      detail::check_leak(cur, opt.leak_tol, tr.max_boundary_mass);
      tr.frames.push_back(cur);
    }
  }
  return tr;
}

/// Full overdamped Fokker-Planck equation on a 1D or 2D grid with no-flux boundary.
inline FpTrajectory solve_full_overdamped(const Potential& pot, double beta, const GridDensity& rho0, double t_end,
                                          const FpOptions& opt = {}) {
  require(pot.dim == rho0.grid.dim(), ErrorKind::grid_mismatch, "potential dimension differs from grid dimension");
  require(pot.dim <= 2, ErrorKind::mode_unavailable, "grid solves are limited to d <= 2");
  return run_operator(overdamped_operator(pot, beta, rho0.grid), rho0, t_end, opt);
}

/// Coarse (1D) equation with coefficients from a closure; time_dependent re-tabulates every step.
inline FpTrajectory solve_coarse(const Closure& coeffs, bool time_dependent, double beta, const GridDensity& rho0,
                                 double t_end, const FpOptions& opt = {}) {
  require(rho0.grid.dim() == 1 && coeffs.k == 1, ErrorKind::mode_unavailable, "coarse solver handles k = 1");
  const Axis& ax = rho0.grid.axes[0];
  const std::size_t n = rho0.values.size();
  std::vector<double> b(n), A(n);
  auto build = [&](double t) {
    for (std::size_t i = 0; i < n; ++i) {
      Vec z = Vec::Constant(1, ax.center(int(i)));
      b[i] = coeffs.b(t, z)(0);
      A[i] = coeffs.A(t, z)(0, 0);
      require(A[i] > 0.0, ErrorKind::numerical, "coarse diffusion must be positive");
    }
    return coarse_operator(b, A, beta, ax);
  };
  if (!time_dependent) return run_operator(build(rho0.time), rho0, t_end, opt);

  require(!opt.implicit, ErrorKind::mode_unavailable, "implicit stepping needs static coefficients");
  require(rho0.valid(1e-10), ErrorKind::numerical, "initial density is not a valid probability vector");
  FpTrajectory tr;
  FaceOperator op = build(rho0.time);
  detail::plan_steps(t_end, opt.dt, opt.safety / op.max_out_rate(n), opt.n_out, false, tr.dt, tr.steps);
  GridDensity cur = rho0;
  const double t0 = rho0.time;
  detail::check_leak(cur, opt.leak_tol, tr.max_boundary_mass);
  tr.frames.push_back(cur);
  if (opt.observer) opt.observer(0, cur);
  std::vector<double> scratch;
  const long every = tr.steps / opt.n_out;
  for (long s = 1; s <= tr.steps; ++s) {
    if (s > 1) op = build(t0 + tr.dt * double(s - 1));
    if (tr.dt * op.max_out_rate(n) > 1.0)
      throw Error(ErrorKind::step_size, "time-dependent coefficients violate the stable step at t=" +
                                            std::to_string(t0 + tr.dt * double(s - 1)));
    op.explicit_step(cur.values, tr.dt, scratch);
    cur.time = t0 + tr.dt * double(s);
    if (opt.observer) opt.observer(s, cur);
    if (s % every == 0) {
      detail::check_leak(cur, opt.leak_tol, tr.max_boundary_mass);
      tr.frames.push_back(cur);
    }
  }
  return tr;
}

inline FpTrajectory solve_coarse(const CoefficientField& field, double beta, const GridDensity& rho0, double t_end,
                                 const FpOptions& opt = {}) {
  require(field.grid == rho0.grid, ErrorKind::grid_mismatch, "coefficients and density use different grids");
  return solve_coarse(Closure::from_field(field), false, beta, rho0, t_end, opt);
}

}  // namespace cgbound
