#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coeffs.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace cgbound {

inline constexpr double kBlowUpThreshold = 1e8;

struct SdeConfig {
  double h = 1e-3;
  double t_end = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  /// Drift Lipschitz estimate for the stability guard h * L <= 0.5 (skipped when unset).
  std::optional<double> lipschitz;

  long steps() const { return long(std::llround(t_end / h)); }

  void validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("physics.beta", "must be a positive number");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("physics.gamma", "must be a positive number");
    if (!(h > 0.0)) throw ConfigError("integrator.h", "step must be positive");
    if (!(t_end >= h)) throw ConfigError("integrator.t_end", "must be at least one step");
    if (lipschitz && h * *lipschitz > 0.5)
      throw Error(ErrorKind::step_size, "step h=" + std::to_string(h) + " violates h*L <= 0.5 with L=" +
                                            std::to_string(*lipschitz));
  }
};

/// Largest Hessian operator norm over random points of a ball; a cheap Lipschitz proxy for grad V.
inline double drift_lipschitz_estimate(const Potential& pot, const Vec& center, double radius, int n = 512,
                                       std::uint64_t seed = 0) {
  if (pot.quadratic) return op_norm(*pot.quadratic);
  RandomStream rs(seed, streams::constants, 11);
  double L = op_norm(pot.hess(center));
  for (int i = 0; i < n; ++i) {
    Vec u = rs.normal_vec(pot.dim);
    Vec x = center + radius * std::pow(rs.uniform(), 1.0 / pot.dim) * u / u.norm();
    L = std::max(L, op_norm(pot.hess(x)));
  }
  return L;
}

inline bool blown_up(const Vec& x) {
  for (long i = 0; i < x.size(); ++i)
    if (!std::isfinite(x(i)) || std::abs(x(i)) > kBlowUpThreshold) return true;
  return false;
}

inline void check_state(const Vec& x, long step, double t) {
  if (blown_up(x)) throw BlowUpError(step, t, "trajectory left the finite region");
}

// ---------------------------------------------------------------- single steps

/// Euler-Maruyama step of dQ = -grad V dt + sqrt(2/beta) dW.
inline Vec step_overdamped_em(const Vec& q, const Potential& pot, const SdeConfig& cfg, const Vec& noise,
                              long step = 0) {
  Vec out = q - cfg.h * pot.grad(q) + std::sqrt(2.0 * cfg.h / cfg.beta) * noise;
  check_state(out, step, double(step + 1) * cfg.h);
  return out;
}

struct PhasePoint {
  Vec q, p;
};

/// BAOAB step for dQ = P dt, dP = -grad V dt - gamma P dt + sqrt(2 gamma / beta) dW (unit mass).
inline PhasePoint step_langevin_baoab(const Vec& q, const Vec& p, const Potential& pot, const SdeConfig& cfg,
                                      const Vec& noise, long step = 0) {
  const double h = cfg.h;
  const double c = std::exp(-cfg.gamma * h);
  Vec pn = p - 0.5 * h * pot.grad(q);
  Vec qn = q + 0.5 * h * pn;
  pn = c * pn + std::sqrt((1.0 - c * c) / cfg.beta) * noise;
  qn += 0.5 * h * pn;
  pn -= 0.5 * h * pot.grad(qn);
  const double t = double(step + 1) * h;
  check_state(qn, step, t);
  check_state(pn, step, t);
  return {qn, pn};
}

/// EM step of dZ = -b(t, Z) dt + sqrt(2 A(t, Z) / beta) dW with the symmetric square root of A.
inline Vec step_effective(const Vec& z, const Closure& cl, double t, const SdeConfig& cfg, const Vec& noise,
                          long step = 0) {
  const Mat root = sym_sqrt(psd_floor(cl.A(t, z), 1e-12));
  Vec out = z - cfg.h * cl.b(t, z) + std::sqrt(2.0 * cfg.h / cfg.beta) * (root * noise);
  check_state(out, step, t + cfg.h);
  return out;
}

/// BAOAB step of the phase-space closure dZ = V dt, dV = -b(Z) dt - gamma V dt + sqrt(2 gamma A / beta) dW.
/// A must be constant (affine coarse map).
inline PhasePoint step_effective_langevin(const Vec& z, const Vec& v, const Closure& cl, double t,
                                          const SdeConfig& cfg, const Vec& noise, long step = 0) {
  require(cl.constant_A, ErrorKind::mode_unavailable, "phase-space closure needs a constant A (affine map)");
  const double h = cfg.h;
  const double c = std::exp(-cfg.gamma * h);
  const Mat root = sym_sqrt(psd_floor(cl.A(t, z), 1e-12));
  Vec vn = v - 0.5 * h * cl.b(t, z);
  Vec zn = z + 0.5 * h * vn;
  vn = c * vn + std::sqrt((1.0 - c * c) / cfg.beta) * (root * noise);
  zn += 0.5 * h * vn;
  vn -= 0.5 * h * cl.b(t + h, zn);
  check_state(zn, step, t + h);
  check_state(vn, step, t + h);
  return {zn, vn};
}

// ---------------------------------------------------------------- ensemble runs

/// Per-output-time ensemble statistics of a run, over surviving trajectories.
struct TrajectorySummary {
  std::vector<double> times;
  std::vector<Vec> mean, var;
  long n_traj = 0;
  long aborted = 0;
  Mat final_points;                 // surviving trajectories at t_end (rows)
  std::optional<Mat> final_momenta;

  double aborted_fraction() const { return n_traj ? double(aborted) / double(n_traj) : 0.0; }
};

struct RunOptions {
  int n_out = 10;
  int jobs = 1;
  SeedLineage lineage;
};

namespace detail {

struct TrajRecord {
  std::vector<Vec> at_out;  // state at each output time
  Vec final_q, final_p;
  bool aborted = false;
};

inline std::vector<long> output_steps(long steps, int n_out) {
  std::vector<long> out;
  const int m = std::max(1, n_out);
  for (int i = 0; i <= m; ++i) out.push_back(long(std::llround(double(steps) * i / m)));
  return out;
}

inline TrajectorySummary summarize(const std::vector<TrajRecord>& recs, const std::vector<long>& outs, double h,
                                   int dim, bool momenta) {
  TrajectorySummary s;
  s.n_traj = long(recs.size());
  for (long st : outs) s.times.push_back(double(st) * h);
  const std::size_t n_out = outs.size();
  std::vector<Vec> sum(n_out, Vec::Zero(dim)), sq(n_out, Vec::Zero(dim));
  long alive = 0;
  for (const auto& r : recs) {
    if (r.aborted) {
      ++s.aborted;
      continue;
    }
    ++alive;
    for (std::size_t i = 0; i < n_out; ++i) {
      sum[i] += r.at_out[i];
      sq[i] += r.at_out[i].cwiseProduct(r.at_out[i]);
    }
  }
  require(alive > 0, ErrorKind::blow_up, "every trajectory blew up");
  for (std::size_t i = 0; i < n_out; ++i) {
    Vec m = sum[i] / double(alive);
    s.mean.push_back(m);
    s.var.push_back(alive > 1 ? Vec((sq[i] - double(alive) * m.cwiseProduct(m)) / double(alive - 1)) : Vec::Zero(dim));
  }
  s.final_points.resize(alive, dim);
  if (momenta) s.final_momenta = Mat(alive, dim);
  long r = 0;
  for (const auto& rec : recs) {
    if (rec.aborted) continue;
    s.final_points.row(r) = rec.final_q.transpose();
    if (momenta) s.final_momenta->row(r) = rec.final_p.transpose();
    ++r;
  }
  return s;
}

template <class StepFn>
TrajectorySummary run_ensemble(const Mat& q0, const std::optional<Mat>& p0, const SdeConfig& cfg,
                               const RunOptions& opt, std::uint32_t stream, long noise_dim, StepFn&& step) {
  cfg.validate();
  const long steps = cfg.steps();
  const auto outs = output_steps(steps, opt.n_out);
  const long n = q0.rows();
  std::vector<TrajRecord> recs(static_cast<std::size_t>(n));
  parallel_for(std::size_t(n), opt.jobs, [&](std::size_t i) {
    RandomStream rs(SeedLineage{opt.lineage.seed, stream, opt.lineage.substream * 1000003u + std::uint32_t(i)});
    Vec q = q0.row(long(i)).transpose();
    Vec p = p0 ? Vec(p0->row(long(i)).transpose()) : Vec();
    auto& rec = recs[i];
    std::size_t next = 0;
    try {
      for (long s = 0; s <= steps; ++s) {
        while (next < outs.size() && outs[next] == s) rec.at_out.push_back(q), ++next;
        if (s == steps) break;
        step(q, p, s, rs.normal_vec(noise_dim));
      }
    } catch (const BlowUpError&) {
      rec.aborted = true;
      return;
    }
    rec.final_q = q;
    rec.final_p = p;
  });
  return summarize(recs, outs, cfg.h, int(q0.cols()), p0.has_value());
}

}  // namespace detail

/// Runs rows of q0 as independent overdamped trajectories.
inline TrajectorySummary simulate_overdamped(const Potential& pot, const SdeConfig& cfg, const Mat& q0,
                                             const RunOptions& opt = {}) {
  return detail::run_ensemble(q0, std::nullopt, cfg, opt, streams::overdamped, q0.cols(),
                              [&](Vec& q, Vec&, long s, const Vec& xi) { q = step_overdamped_em(q, pot, cfg, xi, s); });
}

inline TrajectorySummary simulate_langevin(const Potential& pot, const SdeConfig& cfg, const Mat& q0, const Mat& p0,
                                           const RunOptions& opt = {}) {
  return detail::run_ensemble(q0, p0, cfg, opt, streams::langevin, q0.cols(),
                              [&](Vec& q, Vec& p, long s, const Vec& xi) {
                                auto r = step_langevin_baoab(q, p, pot, cfg, xi, s);
                                q = std::move(r.q), p = std::move(r.p);
                              });
}

/// Runs a closure (effective or coarse-grained, possibly time dependent) from rows of z0.
inline TrajectorySummary simulate_effective(const Closure& cl, const SdeConfig& cfg, const Mat& z0,
                                            const RunOptions& opt = {}) {
  return detail::run_ensemble(z0, std::nullopt, cfg, opt, streams::effective, z0.cols(),
                              [&](Vec& z, Vec&, long s, const Vec& xi) {
                                z = step_effective(z, cl, double(s) * cfg.h, cfg, xi, s);
                              });
}

inline TrajectorySummary simulate_effective_langevin(const Closure& cl, const SdeConfig& cfg, const Mat& z0,
                                                     const Mat& v0, const RunOptions& opt = {}) {
  return detail::run_ensemble(z0, v0, cfg, opt, streams::effective, z0.cols(),
                              [&](Vec& z, Vec& v, long s, const Vec& xi) {
                                auto r = step_effective_langevin(z, v, cl, double(s) * cfg.h, cfg, xi, s);
                                z = std::move(r.q), v = std::move(r.p);
                              });
}

// ---------------------------------------------------------------- coupled pair

struct CoupledPairResult {
  std::vector<double> times;
  std::vector<double> msd;     // E|Z1 - Z2|^2 (phase space: E|(Z1,V1) - (Z2,V2)|^2)
  std::vector<double> msd_se;  // standard error of the mean
  /// E int_0^t |A_hat^{1/2} - A^{1/2}|_F^2 ds per output time (the diffusion mismatch).
  std::vector<double> diffusion_mismatch;
  long n_traj = 0;
  long aborted = 0;
  double aborted_fraction() const { return n_traj ? double(aborted) / double(n_traj) : 0.0; }
};

struct CoupledPairOptions {
  int n_out = 10;
  int jobs = 1;
  bool langevin = false;
  SeedLineage lineage;
};

/// Synchronous coupling: component 1 follows closure_hat, component 2 follows closure_eff, both driven
/// by the same Brownian increment each step. Rows of the initial matrices pair up trajectory by
/// trajectory; v1_0 / v2_0 are required in phase-space mode.
inline CoupledPairResult simulate_coupled_pair(const Mat& z1_0, const Mat& z2_0, const Closure& closure_hat,
                                               const Closure& closure_eff, const SdeConfig& cfg,
                                               const CoupledPairOptions& opt = {},
                                               const std::optional<Mat>& v1_0 = std::nullopt,
                                               const std::optional<Mat>& v2_0 = std::nullopt) {
  cfg.validate();
  require(z1_0.rows() == z2_0.rows() && z1_0.cols() == z2_0.cols(), ErrorKind::grid_mismatch,
          "coupled initial ensembles differ in shape");
  require(closure_hat.k == closure_eff.k && closure_hat.k == z1_0.cols(), ErrorKind::grid_mismatch,
          "closures and initial points differ in dimension");
  if (opt.langevin)
    require(v1_0 && v2_0 && v1_0->rows() == z1_0.rows() && v2_0->rows() == z1_0.rows(), ErrorKind::config,
            "phase-space coupling needs initial velocities");
  const long steps = cfg.steps();
  const auto outs = detail::output_steps(steps, opt.n_out);
  const long n = z1_0.rows();
  const long k = z1_0.cols();
  struct Rec {
    std::vector<double> sep, mis;
    bool aborted = false;
  };
  std::vector<Rec> recs(static_cast<std::size_t>(n));
  parallel_for(std::size_t(n), opt.jobs, [&](std::size_t i) {
    RandomStream rs(SeedLineage{opt.lineage.seed, streams::coupled_pair,
                                opt.lineage.substream * 1000003u + std::uint32_t(i)});
    Vec z1 = z1_0.row(long(i)).transpose(), z2 = z2_0.row(long(i)).transpose();
    Vec v1, v2;
    if (opt.langevin) v1 = v1_0->row(long(i)).transpose(), v2 = v2_0->row(long(i)).transpose();
    auto& rec = recs[i];
    double mismatch = 0.0;
    std::size_t next = 0;
    try {
      for (long s = 0; s <= steps; ++s) {
        while (next < outs.size() && outs[next] == s) {
          double d = (z1 - z2).squaredNorm();
          if (opt.langevin) d += (v1 - v2).squaredNorm();
          rec.sep.push_back(d);
          rec.mis.push_back(mismatch);
          ++next;
        }
        if (s == steps) break;
        const double t = double(s) * cfg.h;
        const Vec xi = rs.normal_vec(k);
        const Mat r1 = sym_sqrt(psd_floor(closure_hat.A(t, z1), 1e-12));
        const Mat r2 = sym_sqrt(psd_floor(closure_eff.A(t, z2), 1e-12));
        mismatch += cfg.h * (r1 - r2).squaredNorm();
        if (opt.langevin) {
          auto a = step_effective_langevin(z1, v1, closure_hat, t, cfg, xi, s);
          auto b = step_effective_langevin(z2, v2, closure_eff, t, cfg, xi, s);
          z1 = std::move(a.q), v1 = std::move(a.p), z2 = std::move(b.q), v2 = std::move(b.p);
        } else {
          z1 = step_effective(z1, closure_hat, t, cfg, xi, s);
          z2 = step_effective(z2, closure_eff, t, cfg, xi, s);
        }
      }
    } catch (const BlowUpError&) {
      rec.aborted = true;
    }
  });
  CoupledPairResult res;
  res.n_traj = n;
  for (long st : outs) res.times.push_back(double(st) * cfg.h);
  const std::size_t m = outs.size();
  std::vector<double> s1(m, 0.0), s2(m, 0.0), mis(m, 0.0);
  long alive = 0;
  for (const auto& r : recs) {
    if (r.aborted) {
      ++res.aborted;
      continue;
    }
    ++alive;
    for (std::size_t j = 0; j < m; ++j) s1[j] += r.sep[j], s2[j] += r.sep[j] * r.sep[j], mis[j] += r.mis[j];
  }
  require(alive > 0, ErrorKind::blow_up, "every coupled trajectory blew up");
  for (std::size_t j = 0; j < m; ++j) {
    const double mean = s1[j] / double(alive);
    const double var = alive > 1 ? std::max(0.0, (s2[j] - double(alive) * mean * mean) / double(alive - 1)) : 0.0;
    res.msd.push_back(mean);
    res.msd_se.push_back(std::sqrt(var / double(alive)));
    res.diffusion_mismatch.push_back(mis[j] / double(alive));
  }
  return res;
}

// ---------------------------------------------------------------- CSV

inline void write_trajectory_csv(const std::filesystem::path& path, const TrajectorySummary& s) {
  CsvWriter w(path);
  const long d = s.mean.empty() ? 0 : s.mean.front().size();
  std::vector<std::string> head{"time"};
  for (long i = 0; i < d; ++i) head.push_back("mean_" + std::to_string(i + 1));
  for (long i = 0; i < d; ++i) head.push_back("var_" + std::to_string(i + 1));
  w.header(head);
  for (std::size_t j = 0; j < s.times.size(); ++j) {
    std::vector<double> row{s.times[j]};
    for (long i = 0; i < d; ++i) row.push_back(s.mean[j](i));
    for (long i = 0; i < d; ++i) row.push_back(s.var[j](i));
    w.row(row);
  }
}

inline void write_coupled_csv(const std::filesystem::path& path, const CoupledPairResult& r) {
  CsvWriter w(path);
  w.header({"time", "separation", "separation_se", "diffusion_mismatch"});
  for (std::size_t j = 0; j < r.times.size(); ++j) w.row({r.times[j], r.msd[j], r.msd_se[j], r.diffusion_mismatch[j]});
}

}  // namespace cgbound
