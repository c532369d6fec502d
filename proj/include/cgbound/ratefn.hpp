#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "closure.hpp"
#include "coeffs.hpp"
#include "errors.hpp"
#include "funcineq.hpp"
#include "grid.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace cgbound {

/// Trapezoid cumulative integral; out[0] = 0.
inline std::vector<double> cumulative_trapezoid(const std::vector<double>& t, const std::vector<double>& f) {
  require(t.size() == f.size(), ErrorKind::grid_mismatch, "time grid and integrand differ in length");
  std::vector<double> out(t.size(), 0.0);
  for (std::size_t i = 1; i < t.size(); ++i) out[i] = out[i - 1] + 0.5 * (t[i] - t[i - 1]) * (f[i] + f[i - 1]);
  return out;
}

// ---------------------------------------------------------------- bound reports

struct BoundReport {
  std::string theorem;
  std::vector<double> times, lhs, rhs;
  std::vector<ConstantReport> constants;
  double tolerance = 1e-3;
  double coverage = 1.0;
  json metadata = json::object();

  std::vector<double> margin() const {
    std::vector<double> m(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) m[i] = rhs[i] - lhs[i];
    return m;
  }
  double min_margin() const {
    double m = std::numeric_limits<double>::infinity();
    for (double x : margin()) m = std::min(m, x);
    return m;
  }
  bool pass() const { return min_margin() >= -tolerance; }

  const ConstantReport* constant(const std::string& name) const {
    for (const auto& c : constants)
      if (c.name == name) return &c;
    return nullptr;
  }

  json to_json() const {
    json cs = json::array();
    for (const auto& c : constants) cs.push_back(c.to_json());
    return {{"theorem", theorem},     {"times", times},        {"lhs", lhs},
            {"rhs", rhs},             {"margin", margin()},    {"tolerance", tolerance},
            {"verdict", pass() ? "pass" : "fail"},             {"coverage", coverage},
            {"constants", cs},        {"metadata", metadata}};
  }
};

inline void write_bound_json(const std::filesystem::path& path, const BoundReport& r) { write_json(path, r.to_json()); }

/// Flat rows (theorem, scenario, eps, t, lhs, rhs, margin, verdict) for sweeps.
inline void write_bound_rows(CsvWriter& w, const BoundReport& r, const std::string& scenario, double eps) {
  const auto m = r.margin();
  for (std::size_t i = 0; i < r.times.size(); ++i)
    w.row_text({r.theorem, scenario, fmt_num(eps), fmt_num(r.times[i]), fmt_num(r.lhs[i]), fmt_num(r.rhs[i]),
                fmt_num(m[i]), m[i] >= -r.tolerance ? "pass" : "fail"});
}

inline std::vector<std::string> bound_csv_header() {
  return {"theorem", "scenario", "eps", "t", "lhs", "rhs", "margin", "verdict"};
}

// ---------------------------------------------------------------- rate functional

struct RateFunctionalResult {
  double value = 0.0;                  // I over the whole trajectory
  std::vector<double> times;
  std::vector<double> integrand;       // int |h_t|^2_{A^-1} d rho_hat_t per frame
  std::vector<double> cumulative;      // (beta / 4) int_0^t integrand
  std::vector<std::vector<double>> h;  // h_t per frame and cell (k = 1)
  double excluded_mass = 0.0;          // max over frames of the mass in cells without a usable log-gradient
  json metadata = json::object();
};

namespace detail {

inline std::vector<double> log_gradient(const GridDensity& d, std::vector<char>& ok) {
  const Axis& ax = d.grid.axes[0];
  const std::size_t n = d.values.size();
  const double h = ax.width();
  ok.assign(n, 0);
  std::vector<double> g(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (d.values[i] <= 0.0) continue;
    const bool m = i > 0 && d.values[i - 1] > 0.0, p = i + 1 < n && d.values[i + 1] > 0.0;
    if (m && p) g[i] = (std::log(d.values[i + 1]) - std::log(d.values[i - 1])) / (2 * h);
    else if (p) g[i] = (std::log(d.values[i + 1]) - std::log(d.values[i])) / h;
    else if (m) g[i] = (std::log(d.values[i]) - std::log(d.values[i - 1])) / h;
    else continue;
    ok[i] = 1;
  }
  return g;
}

}  // namespace detail

/// I(rho_hat) = (beta / 4) int int |h_t|^2_{A^-1} d rho_hat_t dt with
/// h_t = (b + div A / beta) - (b_hat + div A_hat / beta) + (A - A_hat) d_z log rho_hat_t / beta  (k = 1 grids).
/// cg[i] holds b_hat, A_hat of frame i; eff holds b, A. The residual h is the object the constraint
/// equation calls r (up to the factor A); both names denote the same field here.
inline RateFunctionalResult rate_functional(const std::vector<GridDensity>& traj_hat,
                                            const std::vector<CoefficientField>& cg, const CoefficientField& eff,
                                            double beta) {
  require(!traj_hat.empty() && traj_hat.size() == cg.size(), ErrorKind::grid_mismatch,
          "trajectory and coarse-grained coefficient frames differ in count");
  require(traj_hat.front().grid.dim() == 1, ErrorKind::mode_unavailable, "grid rate functional supports k = 1");
  RateFunctionalResult r;
  r.metadata["h_convention"] = "r and h denote the same residual field (h = A r)";
  for (std::size_t f = 0; f < traj_hat.size(); ++f) {
    const GridDensity& rho = traj_hat[f];
    require_same_grid(rho.grid, eff.grid);
    require_same_grid(rho.grid, cg[f].grid);
    std::vector<char> ok;
    const auto dlog = detail::log_gradient(rho, ok);
    std::vector<double> hf(rho.values.size(), 0.0);
    double s = 0.0, excl = 0.0;
    for (std::size_t i = 0; i < rho.values.size(); ++i) {
      if (!ok[i]) {
        excl += rho.values[i];
        continue;
      }
      const double A = eff.A[i](0, 0), Ah = cg[f].A[i](0, 0);
      const double h = (eff.b[i](0) + eff.div_A_at(i) / beta) - (cg[f].b[i](0) + cg[f].div_A_at(i) / beta) +
                       (A - Ah) * dlog[i] / beta;
      hf[i] = h;
      s += rho.values[i] * h * h / A;
    }
    r.times.push_back(rho.time);
    r.integrand.push_back(s / rho.mass());
    r.h.push_back(std::move(hf));
    r.excluded_mass = std::max(r.excluded_mass, excl);
  }
  r.cumulative = cumulative_trapezoid(r.times, r.integrand);
  for (double& c : r.cumulative) c *= beta / 4.0;
  r.value = r.cumulative.back();
  return r;
}

/// Conditional-expectation form of h_t for coordinate-aligned affine maps on a 2D grid:
/// h_t(z) = beta^-1 E_rho_bar[(A - G) G^-1 Dxi grad log(rho/mu)] - A (E_rho_bar F - E_mu_bar F).
/// The first term vanishes since A = G for affine maps.
inline std::vector<double> rate_h_conditional(const GridDensity& rho, const GridDensity& mu, const Potential& pot,
                                              const CoarseMap& map, double beta, const Grid& coarse,
                                              const CoefficientField& eff) {
  require(map.affine && aligned_axis(map) >= 0, ErrorKind::mode_unavailable,
          "conditional form implemented for coordinate-aligned affine maps");
  require_same_grid(rho.grid, mu.grid);
  const int ax = aligned_axis(map);
  const Grid& g = rho.grid;
  require(g.axes[ax] == coarse.axes[0], ErrorKind::grid_mismatch, "coarse grid must match the aligned fine axis");
  const int n1 = g.axes[1].n, nc = g.axes[ax].n, nf = g.axes[1 - ax].n;
  std::vector<double> h(std::size_t(nc), 0.0);
  for (int i = 0; i < nc; ++i) {
    double mr = 0.0, fr = 0.0, mm = 0.0, fm = 0.0;
    for (int j = 0; j < nf; ++j) {
      const std::size_t id = ax == 0 ? std::size_t(i) * n1 + j : std::size_t(j) * n1 + i;
      const double F = local_mean_force(pot, map, beta, g.center(id))(0);
      mr += rho.values[id], fr += rho.values[id] * F;
      mm += mu.values[id], fm += mu.values[id] * F;
    }
    if (mr > 0.0 && mm > 0.0) h[std::size_t(i)] = -eff.A[std::size_t(i)](0, 0) * (fr / mr - fm / mm);
  }
  return h;
}

/// Lemma-type upper bound for I: (1/4)(lambda^2 / beta + kappa^2 beta / (alpha_TI alpha_LSI)) int I(rho_t|mu) dt.
inline double rate_functional_upper(double lambda, double kappa, double alpha_ti, double alpha_lsi, double beta,
                                    double fisher_time_integral) {
  return 0.25 * (lambda * lambda / beta + kappa * kappa * beta / (alpha_ti * alpha_lsi)) * fisher_time_integral;
}

// ---------------------------------------------------------------- entropy-rate inequality

struct EntropyRateOptions {
  std::optional<double> tau;  // strengthened form with the Fisher term when set
  double tolerance = 1e-3;
};

/// H(rho_hat_t | eta_t) <= H(rho_hat_0 | eta_0) + I_t (cumulative rate functional up to t); with tau:
/// H_t + (1 - tau) beta^-1 int_0^t I_A(rho_hat_s | eta_s) ds <= H_0 + I_t / tau.
inline BoundReport verify_entropy_rate_inequality(const std::vector<GridDensity>& traj_hat,
                                                  const std::vector<GridDensity>& traj_eff,
                                                  const RateFunctionalResult& rate, const CoefficientField& eff,
                                                  double beta, const EntropyRateOptions& opt = {}) {
  require(traj_hat.size() == traj_eff.size() && traj_hat.size() == rate.times.size(), ErrorKind::grid_mismatch,
          "trajectories and rate functional differ in frame count");
  BoundReport r;
  r.theorem = opt.tau ? "entropy-rate-tau" : "entropy-rate";
  r.tolerance = opt.tolerance;
  std::vector<double> H, fisher;
  for (std::size_t i = 0; i < traj_hat.size(); ++i) {
    auto d = relative_entropy(traj_hat[i], traj_eff[i]);
    require(!d.infinite, ErrorKind::numerical, "coarse-grained law is not absolutely continuous w.r.t. effective law");
    H.push_back(d.value);
    r.times.push_back(traj_hat[i].time);
    if (opt.tau) fisher.push_back(fisher_information(traj_hat[i], traj_eff[i], &eff.A).value);
  }
  const double H0 = H.front();
  std::vector<double> fint = opt.tau ? cumulative_trapezoid(r.times, fisher) : std::vector<double>(H.size(), 0.0);
  const double tau = opt.tau.value_or(1.0);
  require(tau > 0.0 && tau <= 1.0, ErrorKind::config, "tau must lie in (0, 1]");
  for (std::size_t i = 0; i < H.size(); ++i) {
    r.lhs.push_back(H[i] + (1.0 - tau) / beta * fint[i]);
    r.rhs.push_back(H0 + rate.cumulative[i] / tau);
  }
  r.metadata = {{"tau", tau}, {"rate_functional", rate.value}, {"excluded_mass", rate.excluded_mass}};
  r.metadata.update(rate.metadata);
  return r;
}

// ---------------------------------------------------------------- theorem assembly

enum class Theorem { relent_od, wasser_od, relent_lan, wasser_lan };

inline Theorem parse_theorem(const std::string& s) {
  if (s == "relent-od") return Theorem::relent_od;
  if (s == "wasser-od") return Theorem::wasser_od;
  if (s == "relent-lan") return Theorem::relent_lan;
  if (s == "wasser-lan") return Theorem::wasser_lan;
  throw ConfigError("theorems", "unknown theorem '" + s + "' (relent-od, wasser-od, relent-lan, wasser-lan)");
}

inline std::string to_string(Theorem t) {
  switch (t) {
    case Theorem::relent_od: return "relent-od";
    case Theorem::wasser_od: return "wasser-od";
    case Theorem::relent_lan: return "relent-lan";
    case Theorem::wasser_lan: return "wasser-lan";
  }
  return "?";
}

struct BoundInputs {
  std::vector<double> times;
  std::vector<double> lhs;              // H(rho_hat_t | eta_t) or W2^2(rho_hat_t, eta_t)
  double initial_gap = 0.0;             // H(rho_hat_0 | eta_0) or W2^2(rho_hat_0, eta_0)
  std::vector<double> entropy_drop;     // H(rho_0|mu) - H(rho_t|mu) (overdamped)
  std::optional<double> initial_entropy;  // H(rho_0|mu) (Langevin)
  std::vector<ConstantReport> constants;
  double beta = 1.0;
  double gamma = 1.0;
  std::optional<double> alpha;          // regularization parameter; unset = limit forms
  double tolerance = 1e-3;
  double coverage = 1.0;
  json metadata = json::object();
};

namespace detail {

inline double need(const BoundInputs& in, const std::string& name, Theorem th) {
  for (const auto& c : in.constants)
    if (c.name == name) return c.value;
  throw Error(ErrorKind::incomplete_report, "missing constant '" + name + "' for theorem " + to_string(th));
}

}  // namespace detail

inline BoundReport assemble_bound(Theorem th, const BoundInputs& in) {
  require(in.times.size() == in.lhs.size(), ErrorKind::incomplete_report, "LHS and time grid differ in length");
  BoundReport r;
  r.theorem = to_string(th);
  r.times = in.times;
  r.lhs = in.lhs;
  r.constants = in.constants;
  r.tolerance = in.tolerance;
  r.coverage = in.coverage;
  r.metadata = in.metadata;
  const double beta = in.beta;
  auto drop = [&](std::size_t i) {
    require(in.entropy_drop.size() == in.times.size(), ErrorKind::incomplete_report,
            "missing entropy ledger H(rho_0|mu) - H(rho_t|mu) for theorem " + to_string(th));
    return std::max(0.0, in.entropy_drop[i]);
  };
  auto h0 = [&] {
    if (!in.initial_entropy)
      throw Error(ErrorKind::incomplete_report, "missing H(rho_0|mu) for theorem " + to_string(th));
    return *in.initial_entropy;
  };
  switch (th) {
    case Theorem::relent_od: {
      const double k = detail::need(in, "kappa_H", th), l = detail::need(in, "lambda_H", th),
                   ati = detail::need(in, "alpha_TI", th), alsi = detail::need(in, "alpha_LSI", th);
      const double pref = 0.25 * (l * l + k * k * beta * beta / (ati * alsi));
      for (std::size_t i = 0; i < in.times.size(); ++i) r.rhs.push_back(in.initial_gap + pref * drop(i));
      r.metadata["prefactor"] = pref;
      break;
    }
    case Theorem::wasser_od: {
      const double k = detail::need(in, "kappa_W", th), l = detail::need(in, "lambda_W", th),
                   ati = detail::need(in, "alpha_TI", th), alsi = detail::need(in, "alpha_LSI", th),
                   ct = detail::need(in, "ctilde_W", th);
      const double pref = (4.0 * l * l + beta * k * k) / (ati * alsi);
      for (std::size_t i = 0; i < in.times.size(); ++i)
        r.rhs.push_back(std::exp(ct * in.times[i]) * (in.initial_gap + pref * drop(i)));
      r.metadata["prefactor"] = pref;
      break;
    }
    case Theorem::relent_lan: {
      const double k = detail::need(in, "kappa", th), ati = detail::need(in, "alpha_TI", th);
      const double H0 = h0();
      for (double t : in.times) {
        const double growth = in.alpha ? k * k * t / (2.0 * ati) * (*in.alpha + beta / in.gamma)
                                       : t * k * k / ati * (beta / in.gamma);
        r.rhs.push_back(in.initial_gap + growth * H0);
      }
      r.metadata["form"] = in.alpha ? "alpha-regularized" : "limit alpha -> 0";
      break;
    }
    case Theorem::wasser_lan: {
      const double k = detail::need(in, "kappa", th), ati = detail::need(in, "alpha_TI", th),
                   ct = detail::need(in, "ctilde", th);
      const double H0 = h0();
      const double a = in.alpha.value_or(0.0);
      for (double t : in.times)
        r.rhs.push_back(std::exp(ct * t) * (in.initial_gap + 2.0 * (a + 1.0) * k * k * t / ati * H0));
      r.metadata["form"] = in.alpha ? "alpha-regularized" : "limit alpha -> 0";
      break;
    }
  }
  return r;
}

// ---------------------------------------------------------------- entropy ledger

struct EntropyLedger {
  std::vector<double> times, entropy, fisher;
  std::vector<double> drop;        // H(rho_0|mu) - H(rho_t|mu)
  std::vector<double> dissipated;  // beta^-1 int_0^t I(rho_s|mu) ds
  double max_rel_error = 0.0;      // over times with drop above 1e-6 of the initial entropy

  json to_json() const {
    return {{"times", times}, {"entropy", entropy}, {"fisher", fisher}, {"drop", drop},
            {"dissipated", dissipated}, {"max_rel_error", max_rel_error}};
  }
};

inline EntropyLedger entropy_ledger(const std::vector<double>& times, const std::vector<double>& entropy,
                                    const std::vector<double>& fisher, double beta) {
  EntropyLedger l{times, entropy, fisher};
  auto cum = cumulative_trapezoid(times, fisher);
  for (std::size_t i = 0; i < times.size(); ++i) {
    l.drop.push_back(entropy.front() - entropy[i]);
    l.dissipated.push_back(cum[i] / beta);
    if (l.drop[i] > 1e-6 * std::max(1e-12, entropy.front()))
      l.max_rel_error = std::max(l.max_rel_error, std::abs(l.dissipated[i] - l.drop[i]) / l.drop[i]);
  }
  return l;
}

}  // namespace cgbound
