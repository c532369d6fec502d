#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"

namespace cgbound {

/// Uniform cell partition of [lo, hi].
struct Axis {
  double lo = 0.0, hi = 1.0;
  int n = 1;
  double width() const { return (hi - lo) / n; }
  double center(int i) const { return lo + (i + 0.5) * width(); }
  double edge(int i) const { return lo + i * width(); }
  /// Index of the cell containing x, or -1 outside.
  int locate(double x) const {
    if (!(x >= lo && x <= hi)) return -1;
    int i = int((x - lo) / width());
    return std::min(i, n - 1);
  }
  bool operator==(const Axis& o) const { return lo == o.lo && hi == o.hi && n == o.n; }
};

/// Tensor-product cell grid in 1 or 2 dimensions; cell (i, j) is stored at i * n1 + j.
struct Grid {
  std::vector<Axis> axes;

  Grid() = default;
  explicit Grid(Axis a) : axes{a} {}
  Grid(Axis a, Axis b) : axes{a, b} {}

  int dim() const { return int(axes.size()); }
  std::size_t size() const {
    std::size_t s = 1;
    for (const auto& a : axes) s *= std::size_t(a.n);
    return s;
  }
  double cell_volume() const {
    double v = 1.0;
    for (const auto& a : axes) v *= a.width();
    return v;
  }
  Vec center(std::size_t idx) const {
    Vec c(dim());
    if (dim() == 1) {
      c(0) = axes[0].center(int(idx));
    } else {
      c(0) = axes[0].center(int(idx / axes[1].n));
      c(1) = axes[1].center(int(idx % axes[1].n));
    }
    return c;
  }
  bool operator==(const Grid& o) const { return axes == o.axes; }
};

inline void require_same_grid(const Grid& a, const Grid& b) {
  require(a == b, ErrorKind::grid_mismatch, "densities live on different grids");
}

/// Nonnegative probability per cell on a Grid.
struct GridDensity {
  Grid grid;
  std::vector<double> values;
  double time = 0.0;

  GridDensity() = default;
  GridDensity(Grid g, std::vector<double> v, double t = 0.0) : grid(std::move(g)), values(std::move(v)), time(t) {
    require(values.size() == grid.size(), ErrorKind::grid_mismatch, "value count does not match grid");
  }

  /// Cell-center evaluation of an unnormalized density, normalized to mass 1.
  static GridDensity from_function(const Grid& g, const std::function<double(const Vec&)>& f, double t = 0.0) {
    std::vector<double> v(g.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(g.center(i));
    GridDensity d(g, std::move(v), t);
    d.normalize();
    return d;
  }

  /// Same, from a log-density; shifted before exponentiation.
  static GridDensity from_log(const Grid& g, const std::function<double(const Vec&)>& logf, double t = 0.0) {
    std::vector<double> lv(g.size());
    double mx = -INFINITY;
    for (std::size_t i = 0; i < lv.size(); ++i) {
      lv[i] = logf(g.center(i));
      mx = std::max(mx, lv[i]);
    }
    for (auto& x : lv) x = std::exp(x - mx);
    GridDensity d(g, std::move(lv), t);
    d.normalize();
    return d;
  }

  double mass() const { return std::accumulate(values.begin(), values.end(), 0.0); }

  void normalize() {
    double m = mass();
    require(m > 0.0 && std::isfinite(m), ErrorKind::numerical, "density has no mass");
    for (auto& x : values) x /= m;
  }

  /// Density value (mass / cell volume).
  double density(std::size_t i) const { return values[i] / grid.cell_volume(); }

  Vec mean() const {
    Vec m = Vec::Zero(grid.dim());
    for (std::size_t i = 0; i < values.size(); ++i) m += values[i] * grid.center(i);
    return m / mass();
  }

  Mat covariance() const {
    Vec m = mean();
    Mat s = Mat::Zero(grid.dim(), grid.dim());
    for (std::size_t i = 0; i < values.size(); ++i) {
      Vec x = grid.center(i) - m;
      s += values[i] * x * x.transpose();
    }
    return s / mass();
  }

  double second_moment() const {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[i] * grid.center(i).squaredNorm();
    return s / mass();
  }

  bool valid(double tol = 1e-12) const {
    for (double x : values)
      if (!(x >= 0.0) || !std::isfinite(x)) return false;
    return std::abs(mass() - 1.0) <= tol;
  }
};

/// L1 distance between two densities on the same grid.
inline double l1_distance(const GridDensity& a, const GridDensity& b) {
  require_same_grid(a.grid, b.grid);
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += std::abs(a.values[i] - b.values[i]);
  return s;
}

}  // namespace cgbound
