#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "grid.hpp"
#include "io.hpp"
#include "linalg.hpp"

namespace cgbound {

/// Cellwise drift b and diffusion A over a coarse grid (k = grid dimension).
struct CoefficientField {
  Grid grid;
  int k = 1;
  std::vector<Vec> b;
  std::vector<Mat> A;
  std::vector<long> counts;
  std::vector<Vec> b_se;
  std::vector<Mat> A_se;
  std::optional<double> time;
  long min_count = 1;

  CoefficientField() = default;
  explicit CoefficientField(Grid g) : grid(std::move(g)), k(grid.dim()) {
    const std::size_t n = grid.size();
    b.assign(n, Vec::Zero(k));
    A.assign(n, Mat::Identity(k, k));
    counts.assign(n, 0);
    b_se.assign(n, Vec::Zero(k));
    A_se.assign(n, Mat::Zero(k, k));
  }

  std::size_t size() const { return grid.size(); }
  bool occupied(std::size_t i) const { return counts[i] >= min_count; }

  /// Replaces unoccupied cells by the nearest occupied cell (1D) so interpolation stays defined.
  void fill_missing() {
    if (k != 1) return;
    const long n = long(size());
    std::vector<long> occ;
    for (long i = 0; i < n; ++i)
      if (occupied(std::size_t(i))) occ.push_back(i);
    if (occ.empty()) throw Error(ErrorKind::occupancy, "coefficient field has no occupied cell");
    for (long i = 0; i < n; ++i) {
      if (occupied(std::size_t(i))) continue;
      auto it = std::lower_bound(occ.begin(), occ.end(), i);
      long j = it == occ.end() ? occ.back() : *it;
      if (it != occ.begin() && (it == occ.end() || i - *(it - 1) <= *it - i)) j = *(it - 1);
      b[std::size_t(i)] = b[std::size_t(j)];
      A[std::size_t(i)] = A[std::size_t(j)];
    }
  }

  /// Piecewise-linear interpolation weights; constant beyond the outermost centers inside the box.
  void weights(const Vec& z, std::vector<std::pair<std::size_t, double>>& w) const {
    w.clear();
    if (k == 1) {
      const Axis& ax = grid.axes[0];
      if (!(z(0) >= ax.lo && z(0) <= ax.hi))
        throw Error(ErrorKind::extrapolation, "coarse point " + std::to_string(z(0)) + " outside coefficient grid");
      double x = (z(0) - ax.lo) / ax.width() - 0.5;
      if (x <= 0.0) return w.push_back({0, 1.0});
      if (x >= ax.n - 1) return w.push_back({std::size_t(ax.n - 1), 1.0});
      int i = int(x);
      double f = x - i;
      w.push_back({std::size_t(i), 1.0 - f});
      w.push_back({std::size_t(i + 1), f});
      return;
    }
    const Axis &a0 = grid.axes[0], &a1 = grid.axes[1];
    if (!(z(0) >= a0.lo && z(0) <= a0.hi && z(1) >= a1.lo && z(1) <= a1.hi))
      throw Error(ErrorKind::extrapolation, "coarse point outside coefficient grid");
    auto split = [](const Axis& ax, double v, int& i, double& f) {
      double x = std::clamp((v - ax.lo) / ax.width() - 0.5, 0.0, double(ax.n - 1));
      i = std::min(int(x), ax.n - 2 < 0 ? 0 : ax.n - 2);
      f = ax.n == 1 ? 0.0 : x - i;
    };
    int i, j;
    double fi, fj;
    split(a0, z(0), i, fi);
    split(a1, z(1), j, fj);
    auto id = [&](int a, int c) { return std::size_t(a) * a1.n + std::size_t(c); };
    w.push_back({id(i, j), (1 - fi) * (1 - fj)});
    if (a1.n > 1) w.push_back({id(i, j + 1), (1 - fi) * fj});
    if (a0.n > 1) w.push_back({id(i + 1, j), fi * (1 - fj)});
    if (a0.n > 1 && a1.n > 1) w.push_back({id(i + 1, j + 1), fi * fj});
  }

  Vec eval_b(const Vec& z) const {
    thread_local std::vector<std::pair<std::size_t, double>> w;
    weights(z, w);
    Vec out = Vec::Zero(k);
    for (auto [i, f] : w) out += f * b[i];
    return out;
  }

  /// Interpolated A, re-symmetrized and eigenvalue-floored at 1e-12.
  Mat eval_A(const Vec& z) const {
    thread_local std::vector<std::pair<std::size_t, double>> w;
    weights(z, w);
    Mat out = Mat::Zero(k, k);
    for (auto [i, f] : w) out += f * A[i];
    return psd_floor(out, 1e-12);
  }

  /// Max finite-difference |grad_z b| over occupied neighbor pairs (1D).
  double grad_b_sup() const {
    double s = 0.0;
    if (k != 1) return s;
    const double h = grid.axes[0].width();
    for (std::size_t i = 0; i + 1 < size(); ++i)
      if (occupied(i) && occupied(i + 1)) s = std::max(s, (b[i + 1] - b[i]).norm() / h);
    return s;
  }

  /// Max finite-difference |div_z A| over occupied neighbor pairs (1D).
  double div_A_sup() const {
    double s = 0.0;
    if (k != 1) return s;
    const double h = grid.axes[0].width();
    for (std::size_t i = 0; i + 1 < size(); ++i)
      if (occupied(i) && occupied(i + 1)) s = std::max(s, (A[i + 1] - A[i]).norm() / h);
    return s;
  }

  /// Centered finite-difference div_z A at cell i (1D; one-sided at the ends).
  double div_A_at(std::size_t i) const {
    const double h = grid.axes[0].width();
    const std::size_t n = size();
    if (n < 2) return 0.0;
    if (i == 0) return (A[1](0, 0) - A[0](0, 0)) / h;
    if (i + 1 == n) return (A[n - 1](0, 0) - A[n - 2](0, 0)) / h;
    return (A[i + 1](0, 0) - A[i - 1](0, 0)) / (2 * h);
  }
};

/// CSV with columns z.., b.., A (row-major).., count, b_se.., A_se..
inline void write_coefficients_csv(const std::filesystem::path& path, const CoefficientField& f) {
  CsvWriter w(path);
  std::vector<std::string> cols;
  for (int a = 0; a < f.grid.dim(); ++a) cols.push_back("z" + std::to_string(a + 1));
  for (int a = 0; a < f.k; ++a) cols.push_back("b" + std::to_string(a + 1));
  for (int a = 0; a < f.k; ++a)
    for (int c = 0; c < f.k; ++c) cols.push_back("A" + std::to_string(a + 1) + std::to_string(c + 1));
  cols.push_back("count");
  for (int a = 0; a < f.k; ++a) cols.push_back("b_se" + std::to_string(a + 1));
  for (int a = 0; a < f.k; ++a)
    for (int c = 0; c < f.k; ++c) cols.push_back("A_se" + std::to_string(a + 1) + std::to_string(c + 1));
  w.header(cols);
  for (std::size_t i = 0; i < f.size(); ++i) {
    std::vector<double> r;
    Vec z = f.grid.center(i);
    for (long a = 0; a < z.size(); ++a) r.push_back(z(a));
    for (int a = 0; a < f.k; ++a) r.push_back(f.b[i](a));
    for (int a = 0; a < f.k; ++a)
      for (int c = 0; c < f.k; ++c) r.push_back(f.A[i](a, c));
    r.push_back(double(f.counts[i]));
    for (int a = 0; a < f.k; ++a) r.push_back(f.b_se[i](a));
    for (int a = 0; a < f.k; ++a)
      for (int c = 0; c < f.k; ++c) r.push_back(f.A_se[i](a, c));
    w.row(r);
  }
}

/// Drift and diffusion as functions of (t, z); the common currency of integrators and solvers.
struct Closure {
  int k = 1;
  std::function<Vec(double, const Vec&)> b;
  std::function<Mat(double, const Vec&)> A;
  bool constant_A = false;
  std::string label;

  static Closure from_field(CoefficientField f, std::string label = "grid") {
    auto p = std::make_shared<CoefficientField>(std::move(f));
    Closure c;
    c.k = p->k;
    c.b = [p](double, const Vec& z) { return p->eval_b(z); };
    c.A = [p](double, const Vec& z) { return p->eval_A(z); };
    c.label = std::move(label);
    return c;
  }

  /// Time-dependent closure from fields at increasing times; linear in t between frames.
  static Closure from_series(std::vector<CoefficientField> frames, std::string label = "grid-series") {
    require(!frames.empty(), ErrorKind::config, "empty coefficient series");
    auto p = std::make_shared<std::vector<CoefficientField>>(std::move(frames));
    auto locate = [p](double t, std::size_t& i, double& f) {
      const auto& v = *p;
      if (v.size() == 1 || t <= v.front().time.value_or(0.0)) {
        i = 0, f = 0.0;
        return;
      }
      if (t >= v.back().time.value_or(0.0)) {
        i = v.size() - 2, f = 1.0;
        return;
      }
      auto it = std::upper_bound(v.begin(), v.end(), t,
                                 [](double x, const CoefficientField& c) { return x < c.time.value_or(0.0); });
      i = std::size_t(it - v.begin()) - 1;
      double t0 = v[i].time.value_or(0.0), t1 = v[i + 1].time.value_or(0.0);
      f = t1 > t0 ? (t - t0) / (t1 - t0) : 0.0;
    };
    Closure c;
    c.k = p->front().k;
    c.b = [p, locate](double t, const Vec& z) {
      std::size_t i;
      double f;
      locate(t, i, f);
      if (p->size() == 1) return (*p)[0].eval_b(z);
      return Vec((1 - f) * (*p)[i].eval_b(z) + f * (*p)[i + 1].eval_b(z));
    };
    c.A = [p, locate](double t, const Vec& z) {
      std::size_t i;
      double f;
      locate(t, i, f);
      if (p->size() == 1) return (*p)[0].eval_A(z);
      return Mat((1 - f) * (*p)[i].eval_A(z) + f * (*p)[i + 1].eval_A(z));
    };
    c.label = std::move(label);
    return c;
  }

  /// Samples the closure at the centers of a 1D grid.
  CoefficientField tabulate(const Grid& g, double t = 0.0) const {
    CoefficientField f(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
      Vec z = g.center(i);
      f.b[i] = b(t, z);
      f.A[i] = A(t, z);
      f.counts[i] = 1;
    }
    f.time = t;
    return f;
  }
};

}  // namespace cgbound
