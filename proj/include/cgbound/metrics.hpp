#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "grid.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace cgbound {

/// Divergence value with an explicit tag for +infinity (absolute-continuity failure).
struct Divergence {
  double value = 0.0;
  bool infinite = false;
  double finite_or(double fallback) const { return infinite ? fallback : value; }
};

/// sum zeta log(zeta / nu) over cells, 0 log 0 = 0.
inline Divergence relative_entropy(const GridDensity& zeta, const GridDensity& nu) {
  require_same_grid(zeta.grid, nu.grid);
  Divergence d;
  double s = 0.0;
  for (std::size_t i = 0; i < zeta.values.size(); ++i) {
    const double z = zeta.values[i];
    if (z <= 0.0) continue;
    if (nu.values[i] <= 0.0) {
      d.infinite = true;
      d.value = std::numeric_limits<double>::infinity();
      return d;
    }
    s += z * std::log(z / nu.values[i]);
  }
  d.value = std::max(s, 0.0);
  return d;
}

// ---------------------------------------------------------------- histograms

/// Freedman-Diaconis bin width 2 IQR n^{-1/3} for one column.
inline double fd_width(std::vector<double> x) {
  const std::size_t n = x.size();
  require(n >= 2, ErrorKind::numerical, "histogram needs at least two samples");
  std::sort(x.begin(), x.end());
  auto q = [&](double p) {
    double pos = p * double(n - 1);
    std::size_t i = std::size_t(pos);
    double f = pos - double(i);
    return i + 1 < n ? (1 - f) * x[i] + f * x[i + 1] : x[i];
  };
  double iqr = q(0.75) - q(0.25);
  if (!(iqr > 0.0)) iqr = x.back() - x.front();
  if (!(iqr > 0.0)) iqr = 1.0;
  return 2.0 * iqr * std::pow(double(n), -1.0 / 3.0);
}

/// Shared Freedman-Diaconis grid covering the pooled samples (rows = samples, 1 or 2 columns).
inline Grid fd_grid(const Mat& a, const Mat& b) {
  require(a.cols() == b.cols() && a.cols() <= 2, ErrorKind::mode_unavailable, "histograms support 1 or 2 columns");
  Grid g;
  for (long c = 0; c < a.cols(); ++c) {
    std::vector<double> pool(a.col(c).data(), a.col(c).data() + a.rows());
    pool.insert(pool.end(), b.col(c).data(), b.col(c).data() + b.rows());
    const double w = fd_width(pool);
    const auto [mn, mx] = std::minmax_element(pool.begin(), pool.end());
    const int n = std::max(1, int(std::ceil((*mx - *mn) / w)) + 1);
    const double mid = 0.5 * (*mn + *mx), half = 0.5 * n * w;
    g.axes.push_back(Axis{mid - half, mid + half, n});
  }
  return g;
}

/// Normalized histogram of samples on a grid; samples outside are dropped (count returned).
inline GridDensity histogram(const Mat& pts, const Grid& g, long* dropped = nullptr) {
  std::vector<double> v(g.size(), 0.0);
  long out = 0;
  for (long r = 0; r < pts.rows(); ++r) {
    long id = 0;
    bool inside = true;
    for (int a = 0; a < g.dim(); ++a) {
      int c = g.axes[a].locate(pts(r, a));
      if (c < 0) inside = false;
      id = id * g.axes[a].n + c;
    }
    if (inside) v[std::size_t(id)] += 1.0;
    else ++out;
  }
  if (dropped) *dropped = out;
  GridDensity d(g, std::move(v));
  d.normalize();
  return d;
}

/// Histogrammed ensemble against a reference grid density (bins = reference grid).
inline Divergence relative_entropy(const Mat& zeta_samples, const GridDensity& nu) {
  return relative_entropy(histogram(zeta_samples, nu.grid), nu);
}

/// Two ensembles through a shared Freedman-Diaconis histogram.
inline Divergence relative_entropy(const Mat& zeta_samples, const Mat& nu_samples) {
  Grid g = fd_grid(zeta_samples, nu_samples);
  return relative_entropy(histogram(zeta_samples, g), histogram(nu_samples, g));
}

// ---------------------------------------------------------------- Wasserstein

struct W2Result {
  double value = 0.0;  // W2 (not squared)
  std::string mode;
  int slices = 0;
  double squared() const { return value * value; }
};

namespace detail {

/// Piecewise-linear quantile function of a piecewise-uniform 1D density.
struct GridQuantile {
  std::vector<double> cum, edges, mass;
  explicit GridQuantile(const GridDensity& d) {
    const Axis& ax = d.grid.axes[0];
    const double tot = d.mass();
    cum.push_back(0.0);
    for (int i = 0; i < ax.n; ++i) {
      mass.push_back(d.values[std::size_t(i)] / tot);
      cum.push_back(cum.back() + mass.back());
      edges.push_back(ax.edge(i));
    }
    edges.push_back(ax.hi);
    cum.back() = 1.0;
  }
};

inline double sq_linear_integral(double d0, double d1, double L) { return L * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0; }

}  // namespace detail

/// Exact W2 between piecewise-uniform 1D densities via the quantile coupling.
inline W2Result wasserstein2(const GridDensity& a, const GridDensity& b) {
  require(a.grid.dim() == 1 && b.grid.dim() == 1, ErrorKind::mode_unavailable,
          "grid W2 is exact only in 1D; use ensembles for k = 2");
  detail::GridQuantile qa(a), qb(b);
  std::size_t i = 0, j = 0;
  auto next_pos = [](const detail::GridQuantile& q, std::size_t& k) {
    while (k + 1 < q.mass.size() && q.mass[k] <= 0.0) ++k;
  };
  auto x_at = [](const detail::GridQuantile& q, std::size_t k, double u) {
    if (q.mass[k] <= 0.0) return q.edges[k + 1];
    // rounding in the cumulative sums can push u slightly outside [cum_k, cum_k+1] on tiny cells
    const double f = std::clamp((u - q.cum[k]) / q.mass[k], 0.0, 1.0);
    return q.edges[k] + f * (q.edges[k + 1] - q.edges[k]);
  };
  double u = 0.0, s = 0.0;
  next_pos(qa, i);
  next_pos(qb, j);
  while (u < 1.0 && i < qa.mass.size() && j < qb.mass.size()) {
    const double ue = std::min(qa.cum[i + 1], qb.cum[j + 1]);
    if (ue > u) {
      const double d0 = x_at(qa, i, u) - x_at(qb, j, u), d1 = x_at(qa, i, ue) - x_at(qb, j, ue);
      s += detail::sq_linear_integral(d0, d1, ue - u);
      u = ue;
    }
    if (qa.cum[i + 1] <= u) ++i, next_pos(qa, i);
    if (j < qb.mass.size() && qb.cum[j + 1] <= u) ++j, next_pos(qb, j);
  }
  return {std::sqrt(std::max(s, 0.0)), "quantile-grid", 0};
}

/// Exact W2 between equal-weight empirical measures on the line (any sizes).
inline W2Result wasserstein2_sorted(std::vector<double> x, std::vector<double> y) {
  require(!x.empty() && !y.empty(), ErrorKind::numerical, "empty sample");
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double nx = double(x.size()), ny = double(y.size());
  std::size_t i = 0, j = 0;
  double u = 0.0, s = 0.0;
  while (i < x.size() && j < y.size()) {
    const double ue = std::min(double(i + 1) / nx, double(j + 1) / ny);
    const double d = x[i] - y[j];
    s += d * d * (ue - u);
    u = ue;
    if (double(i + 1) / nx <= u + 1e-15) ++i;
    if (double(j + 1) / ny <= u + 1e-15) ++j;
  }
  return {std::sqrt(s), "quantile-sorted", 0};
}

/// Minimum-cost perfect assignment (Hungarian algorithm with potentials), O(n^3).
inline std::vector<int> hungarian(const Mat& cost) {
  const int n = int(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(std::size_t(n + 1), 0.0), v(std::size_t(n + 1), 0.0);
  std::vector<int> p(std::size_t(n + 1), 0), way(std::size_t(n + 1), 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(std::size_t(n + 1), inf);
    std::vector<char> used(std::size_t(n + 1), 0);
    do {
      used[std::size_t(j0)] = 1;
      int i0 = p[std::size_t(j0)], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[std::size_t(j)]) continue;
        double cur = cost(i0 - 1, j - 1) - u[std::size_t(i0)] - v[std::size_t(j)];
        if (cur < minv[std::size_t(j)]) minv[std::size_t(j)] = cur, way[std::size_t(j)] = j0;
        if (minv[std::size_t(j)] < delta) delta = minv[std::size_t(j)], j1 = j;
      }
      for (int j = 0; j <= n; ++j) {
        if (used[std::size_t(j)]) u[std::size_t(p[std::size_t(j)])] += delta, v[std::size_t(j)] -= delta;
        else minv[std::size_t(j)] -= delta;
      }
      j0 = j1;
    } while (p[std::size_t(j0)] != 0);
    do {
      int j1 = way[std::size_t(j0)];
      p[std::size_t(j0)] = p[std::size_t(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assign(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j) assign[std::size_t(p[std::size_t(j)] - 1)] = j - 1;
  return assign;
}

/// W2 between two ensembles (rows = samples). 1D: exact quantile coupling; equal sizes n <= 512:
/// exact assignment; otherwise sliced W2 with `slices` random directions.
inline W2Result wasserstein2(const Mat& a, const Mat& b, int slices = 256, std::uint64_t seed = 0) {
  require(a.cols() == b.cols(), ErrorKind::grid_mismatch, "ensembles differ in dimension");
  if (a.cols() == 1)
    return wasserstein2_sorted(std::vector<double>(a.data(), a.data() + a.rows()),
                               std::vector<double>(b.data(), b.data() + b.rows()));
  if (a.rows() == b.rows() && a.rows() <= 512) {
    const long n = a.rows();
    Mat C(n, n);
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < n; ++j) C(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    auto as = hungarian(C);
    double s = 0.0;
    for (long i = 0; i < n; ++i) s += C(i, as[std::size_t(i)]);
    return {std::sqrt(s / double(n)), "assignment", 0};
  }
  RandomStream rs(seed, streams::sliced, 0);
  double s = 0.0;
  for (int l = 0; l < slices; ++l) {
    Vec dir = rs.normal_vec(a.cols());
    dir /= dir.norm();
    Vec pa = a * dir, pb = b * dir;
    double w = wasserstein2_sorted(to_std(pa), to_std(pb)).value;
    s += w * w;
  }
  return {std::sqrt(s / slices), "sliced", slices};
}

// ---------------------------------------------------------------- Fisher information

/// sum zeta |grad log(zeta / nu)|^2_A with centered differences (one-sided at edges and next to
/// empty cells). weight: optional per-cell matrices (1 x 1 in 1D, 2 x 2 in 2D).
inline Divergence fisher_information(const GridDensity& zeta, const GridDensity& nu,
                                     const std::vector<Mat>* weight = nullptr) {
  require_same_grid(zeta.grid, nu.grid);
  const Grid& g = zeta.grid;
  const std::size_t n = g.size();
  std::vector<double> lr(n, 0.0);
  std::vector<char> ok(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (zeta.values[i] <= 0.0) continue;
    if (nu.values[i] <= 0.0) return {std::numeric_limits<double>::infinity(), true};
    lr[i] = std::log(zeta.values[i] / nu.values[i]);
    ok[i] = 1;
  }
  const int d = g.dim();
  const int n1 = d == 2 ? g.axes[1].n : 1;
  double s = 0.0;
  Vec grad(d);
  for (std::size_t i = 0; i < n; ++i) {
    if (!ok[i]) continue;
    for (int a = 0; a < d; ++a) {
      const int na = g.axes[a].n;
      const long stride = (d == 2 && a == 0) ? n1 : 1;
      const int pos = d == 1 ? int(i) : (a == 0 ? int(i / std::size_t(n1)) : int(i % std::size_t(n1)));
      const bool has_m = pos > 0 && ok[i - std::size_t(stride)], has_p = pos + 1 < na && ok[i + std::size_t(stride)];
      const double h = g.axes[a].width();
      if (has_m && has_p) grad(a) = (lr[i + std::size_t(stride)] - lr[i - std::size_t(stride)]) / (2 * h);
      else if (has_p) grad(a) = (lr[i + std::size_t(stride)] - lr[i]) / h;
      else if (has_m) grad(a) = (lr[i] - lr[i - std::size_t(stride)]) / h;
      else grad(a) = 0.0;
    }
    double q = weight ? grad.dot((*weight)[i] * grad) : grad.squaredNorm();
    s += zeta.values[i] * q;
  }
  return {s / zeta.mass(), false};
}

// ---------------------------------------------------------------- Gaussians

struct GaussianDivergences {
  double H = 0.0;
  double W2 = 0.0;
  double W2sq = 0.0;
};

inline void require_spd(const Mat& S) {
  require(S.rows() == S.cols() && S.isApprox(S.transpose(), 1e-10) && min_eig(S) > 0.0, ErrorKind::numerical,
          "covariance must be symmetric positive definite");
}

/// Closed-form H(N(m1,S1) | N(m2,S2)) and W2(N(m1,S1), N(m2,S2)).
inline GaussianDivergences gaussian_divergences(const Vec& m1, const Mat& S1, const Vec& m2, const Mat& S2) {
  require_spd(S1);
  require_spd(S2);
  const long n = S1.rows();
  Eigen::LLT<Mat> l2(S2);
  const Vec dm = m2 - m1;
  const double logdet1 = 2.0 * Eigen::LLT<Mat>(S1).matrixLLT().diagonal().array().log().sum();
  const double logdet2 = 2.0 * l2.matrixLLT().diagonal().array().log().sum();
  GaussianDivergences g;
  g.H = 0.5 * (l2.solve(S1).trace() - double(n) + dm.dot(l2.solve(dm)) + logdet2 - logdet1);
  g.H = std::max(g.H, 0.0);
  const Mat r2 = sym_sqrt(S2);
  const Mat cross = sym_sqrt(r2 * S1 * r2);
  g.W2sq = std::max(0.0, dm.squaredNorm() + (S1 + S2 - 2.0 * cross).trace());
  g.W2 = std::sqrt(g.W2sq);
  return g;
}

/// Closed-form relative Fisher information I(N(m1,S1) | N(m2,S2)).
inline double gaussian_fisher(const Vec& m1, const Mat& S1, const Vec& m2, const Mat& S2) {
  const Mat P1 = S1.inverse(), P2 = S2.inverse();
  const Mat D = P2 - P1;
  return (D * S1 * D).trace() + (P2 * (m1 - m2)).squaredNorm();
}

}  // namespace cgbound
