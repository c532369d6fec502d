#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "closure.hpp"
#include "coeffs.hpp"
#include "config.hpp"
#include "errors.hpp"
#include "fpgrid.hpp"
#include "funcineq.hpp"
#include "gaussref.hpp"
#include "integrators.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "ratefn.hpp"
#include "rng.hpp"

namespace cgbound {

inline constexpr const char* kVersion = "0.1.0";

enum class Regime { overdamped, langevin };

/// Parsed and validated scenario. Field paths in errors follow the INI layout.
struct ScenarioSpec {
  Config config;
  std::string name = "scenario";
  Regime regime = Regime::overdamped;
  double beta = 1.0, gamma = 1.0, eps = 0.1;
  Potential pot;
  CoarseMap map;
  Grid fine, coarse;
  double t_end = 1.0, dt = 0.0;
  int n_out = 50;
  std::string initial_kind = "local-equilibrium";
  Vec q_mean, q_var, p_mean, p_var;
  double z_mean = 1.0, z_var = 0.25;
  std::vector<std::string> theorems;
  double tolerance = 1e-12;
  double rate_tolerance = 1e-3;
  std::optional<double> tau;
  std::optional<double> alpha_reg;
  bool analytic_constants = true;
  std::optional<AlphaMode> alpha_mode;
  std::string alpha_ti_source = "phase";
  SampleSpec sample;
  long n_traj = 10000;
  double sde_h = 0.005;
  double moment_tol = 0.05;
  std::uint64_t seed = 0;
  int jobs = 1;
};

namespace detail {

inline Vec vec_of(const std::vector<double>& v) {
  Vec out(long(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(long(i)) = v[i];
  return out;
}

inline Vec config_vec(const Config& c, const std::string& key, std::vector<double> def, long dim, bool positive) {
  auto v = c.list(key, std::move(def));
  if (long(v.size()) != dim) throw ConfigError(key, "expected " + std::to_string(dim) + " entries");
  for (double x : v)
    if (positive && !(x > 0.0)) throw ConfigError(key, "entries must be positive");
  return vec_of(v);
}

inline Axis config_axis(const Config& c, const std::string& key, double lo, double hi, int n) {
  if (c.has(key)) {
    auto v = c.list(key);
    if (v.size() != 2 || !(v[1] > v[0])) throw ConfigError(key, "expected 'lo hi' with lo < hi");
    lo = v[0], hi = v[1];
  }
  return Axis{lo, hi, n};
}

}  // namespace detail

inline ScenarioSpec parse_scenario(const Config& c, std::optional<double> eps_override = std::nullopt) {
  ScenarioSpec s;
  s.config = c;
  s.name = c.str("run.name", "scenario");
  const std::string regime = c.str("physics.regime", "overdamped");
  if (regime == "overdamped") s.regime = Regime::overdamped;
  else if (regime == "langevin") s.regime = Regime::langevin;
  else throw ConfigError("physics.regime", "expected overdamped or langevin, got '" + regime + "'");
  s.beta = c.positive("physics.beta");
  if (s.regime == Regime::langevin) s.gamma = c.positive("physics.gamma");
  s.pot = potential_from_config(c, eps_override);
  s.eps = s.pot.split ? s.pot.split->eps : c.positive("physics.eps", 0.1);
  s.map = map_from_config(c, s.pot.dim);
  if (s.map.k != 1) throw ConfigError("map.kind", "the harness handles k = 1 maps");

  s.t_end = c.positive("time.t_end", 1.0);
  s.n_out = int(c.integer("time.n_out", 50));
  if (s.n_out < 1) throw ConfigError("time.n_out", "must be at least 1");
  s.dt = c.num("time.dt", 0.0);
  if (s.dt < 0.0) throw ConfigError("time.dt", "must be nonnegative (0 selects the stable step)");

  const long d = s.pot.dim;
  if (s.regime == Regime::overdamped) {
    if (d != 2) throw ConfigError("physics.potential", "the overdamped grid pipeline needs d = 2");
    const int n = int(c.integer("grid.n", 128));
    if (n < 8) throw ConfigError("grid.n", "need at least 8 cells per axis");
    const double delta = s.pot.params.count("delta") ? s.pot.params.at("delta") : 1.0;
    const double half2 = 8.0 * std::sqrt(s.eps / (s.beta * delta)) + 0.5;
    const double half1 = 7.0 / std::sqrt(std::min(1.0, s.beta));
    s.fine = Grid(detail::config_axis(c, "grid.q1", -half1, half1, n), detail::config_axis(c, "grid.q2", -half2, half2, n));
    const int ax = aligned_axis(s.map);
    if (ax >= 0 && !c.has("grid.z")) s.coarse = Grid(s.fine.axes[std::size_t(ax)]);
    else s.coarse = Grid(detail::config_axis(c, "grid.z", s.fine.axes[0].lo, s.fine.axes[0].hi, int(c.integer("grid.n_coarse", n))));
  }

  s.initial_kind = c.str("initial.kind", s.regime == Regime::overdamped ? "local-equilibrium" : "gaussian");
  if (s.initial_kind != "gaussian" && s.initial_kind != "local-equilibrium")
    throw ConfigError("initial.kind", "expected gaussian or local-equilibrium");
  if (s.regime == Regime::overdamped) {
    s.q_mean = detail::config_vec(c, "initial.mean", {1.0, 0.5}, d, false);
    s.q_var = detail::config_vec(c, "initial.var", {0.25, 0.05}, d, true);
  } else {
    if (s.initial_kind != "gaussian") throw ConfigError("initial.kind", "the Langevin pipeline needs a Gaussian start");
    s.q_mean = detail::config_vec(c, "initial.mean", std::vector<double>(std::size_t(d), 0.0), d, false);
    if (!c.has("initial.mean")) s.q_mean(0) = 1.0, s.q_mean(d - 1) = d > 1 ? 0.5 : 1.0;
    s.q_var = detail::config_vec(c, "initial.var", std::vector<double>(std::size_t(d), 0.1), d, true);
    s.p_mean = detail::config_vec(c, "initial.p_mean", std::vector<double>(std::size_t(d), 0.0), d, false);
    s.p_var = detail::config_vec(c, "initial.p_var", std::vector<double>(std::size_t(d), 0.1), d, true);
  }
  s.z_mean = c.num("initial.z_mean", 1.0);
  s.z_var = c.positive("initial.z_var", 0.25);

  const std::vector<std::string> def = s.regime == Regime::overdamped
                                           ? std::vector<std::string>{"relent-od", "wasser-od", "entropy-rate"}
                                           : std::vector<std::string>{"relent-lan", "wasser-lan"};
  s.theorems = c.words("theorems.list", def);
  if (s.theorems.empty()) throw ConfigError("theorems.list", "at least one theorem is required");
  for (const auto& t : s.theorems) {
    if (t == "entropy-rate") {
      if (s.regime != Regime::overdamped) throw ConfigError("theorems.list", "entropy-rate needs the overdamped regime");
      continue;
    }
    Theorem th;
    try {
      th = parse_theorem(t);
    } catch (const ConfigError& e) {
      throw ConfigError("theorems.list", e.what());
    }
    const bool lan = th == Theorem::relent_lan || th == Theorem::wasser_lan;
    if (lan != (s.regime == Regime::langevin))
      throw ConfigError("theorems.list", "theorem '" + t + "' does not match physics.regime");
  }
  s.tolerance = c.num("theorems.tolerance", 1e-12);
  if (s.tolerance < 0.0) throw ConfigError("theorems.tolerance", "must be nonnegative");
  s.rate_tolerance = c.num("theorems.rate_tolerance", 1e-3);
  if (c.has("theorems.tau")) {
    s.tau = c.num("theorems.tau");
    if (!(*s.tau > 0.0 && *s.tau <= 1.0)) throw ConfigError("theorems.tau", "must lie in (0, 1]");
  } else {
    s.tau = 0.5;
  }
  if (c.has("theorems.alpha")) {
    s.alpha_reg = c.num("theorems.alpha");
    if (!(*s.alpha_reg > 0.0)) throw ConfigError("theorems.alpha", "regularization must be positive");
  }
  s.alpha_ti_source = c.str("theorems.alpha_ti", "phase");
  if (s.alpha_ti_source != "phase" && s.alpha_ti_source != "position")
    throw ConfigError("theorems.alpha_ti", "expected phase or position");

  const std::string mode = c.str("constants.mode", "analytic");
  if (mode != "analytic" && mode != "estimated") throw ConfigError("constants.mode", "expected analytic or estimated");
  s.analytic_constants = mode == "analytic";
  if (c.has("constants.alpha_mode")) s.alpha_mode = parse_alpha_mode(c.str("constants.alpha_mode"));
  s.sample.pairs = int(c.integer("constants.pairs", 400));
  s.sample.max_cells = int(c.integer("constants.max_cells", 32));
  s.sample.fiber_radius = c.positive("constants.fiber_radius", 4.0);

  s.n_traj = c.integer("simulate.n_traj", 10000);
  if (s.n_traj < 0) throw ConfigError("simulate.n_traj", "must be nonnegative");
  s.sde_h = c.positive("simulate.h", 0.005);
  s.moment_tol = c.positive("simulate.moment_tolerance", 0.05);

  const double seed = c.num("run.seed", 0.0);
  if (seed < 0.0 || seed != std::floor(seed)) throw ConfigError("run.seed", "must be a nonnegative integer");
  s.seed = std::uint64_t(seed);
  s.sample.seed = s.seed;
  s.jobs = int(c.integer("run.jobs", 1));
  if (s.jobs < 1) throw ConfigError("run.jobs", "must be at least 1");
  return s;
}

// ---------------------------------------------------------------- overdamped grid pipeline

struct OverdampedRun {
  std::vector<double> t;                 // every solver step
  std::vector<GridDensity> rho_hat, eta;  // push-forward of the full solve / effective solve, per step
  std::vector<CoefficientField> cg;       // coarse-grained coefficients per step
  std::vector<double> H_hat, W2sq;        // H(rho_hat_t | eta_t), W2^2(rho_hat_t, eta_t)
  std::vector<double> entropy, dissipation;  // H(rho_t|mu), -dH/dt of the scheme
  CoefficientField eff;
  std::optional<Closure> eff_closure;     // closed form when the catalog has one
  std::string eff_source;
  RateFunctionalResult rate;
  EntropyLedger ledger;
  double max_entropy_increase = 0.0;      // per-step slack of the dissipation inequality
  double gyongy_l1 = 0.0;                 // sup over steps of |rho_hat - replayed coarse solve|_1
  double grad_flow_residual = 0.0;
  double max_boundary_mass = 0.0;
  double captured_mass = 1.0;
  double dt = 0.0;
  long steps = 0;
};

/// Initial density on the fine grid.
inline GridDensity initial_density(const ScenarioSpec& s) {
  if (s.initial_kind == "gaussian") {
    const Vec m = s.q_mean, v = s.q_var;
    return GridDensity::from_log(s.fine, [&](const Vec& q) { return -0.5 * ((q - m).array().square() / v.array()).sum(); });
  }
  // local equilibrium: slow Gaussian law times the Gibbs conditional on each fiber
  GibbsMeasure mu(s.pot, s.beta);
  const GridDensity mg = mu.on_grid(s.fine);
  auto slow = [&](double z) { return -0.5 * (z - s.z_mean) * (z - s.z_mean) / s.z_var; };
  const int ax = aligned_axis(s.map);
  std::vector<double> lv(s.fine.size());
  if (ax >= 0) {
    const int n1 = s.fine.axes[1].n;
    std::vector<double> col(std::size_t(s.fine.axes[std::size_t(ax)].n), 0.0);
    for (std::size_t i = 0; i < s.fine.size(); ++i) col[ax == 0 ? i / std::size_t(n1) : i % std::size_t(n1)] += mg.values[i];
    for (std::size_t i = 0; i < s.fine.size(); ++i) {
      const std::size_t c = ax == 0 ? i / std::size_t(n1) : i % std::size_t(n1);
      lv[i] = mg.values[i] > 0.0 && col[c] > 0.0 ? std::log(mg.values[i] / col[c]) + slow(s.fine.center(i)(ax)) : -INFINITY;
    }
  } else {
    for (std::size_t i = 0; i < s.fine.size(); ++i) {
      const Vec q = s.fine.center(i);
      const double z = s.map.xi(q)(0);
      lv[i] = -s.beta * s.pot.eval(q) - log_marginal_gibbs(mu, s.map, z, s.fine) + slow(z);
    }
  }
  double mx = -INFINITY;
  for (double x : lv) mx = std::max(mx, x);
  for (double& x : lv) x = std::isfinite(x) ? std::exp(x - mx) : 0.0;
  GridDensity d(s.fine, std::move(lv));
  d.normalize();
  return d;
}

/// Effective coefficients on the coarse grid: closed form when available (and allowed), else fiber quadrature.
inline CoefficientField effective_field(const ScenarioSpec& s, std::optional<Closure>& closed, std::string& source) {
  closed = s.analytic_constants ? analytic_effective_closure(s.pot, s.map) : std::nullopt;
  if (closed) {
    source = "closed-form catalog closure";
    return closed->tabulate(s.coarse);
  }
  source = "fiber quadrature of the Gibbs density";
  return effective_coefficients_quadrature(GibbsMeasure(s.pot, s.beta), s.map, s.coarse, s.fine);
}

inline OverdampedRun run_overdamped(const ScenarioSpec& s) {
  OverdampedRun r;
  const GridDensity rho0 = initial_density(s);
  const GridDensity mu = GibbsMeasure(s.pot, s.beta).on_grid(s.fine);
  const FaceOperator op = overdamped_operator(s.pot, s.beta, s.fine);
  const GridProjector project(s.fine, s.pot, s.map, s.beta, s.coarse);

  r.eff = effective_field(s, r.eff_closure, r.eff_source);
  const GridDensity mu_hat = marginal_density(mu, s.map, s.coarse).marginal;
  r.grad_flow_residual = gradient_flow_residual(r.eff, mu_hat, s.beta);

  FpOptions fo;
  fo.dt = s.dt;
  fo.n_out = s.n_out;
  fo.observer = [&](long, const GridDensity& st) {
    auto mr = marginal_density(st, s.map, s.coarse);
    r.captured_mass = std::min(r.captured_mass, mr.captured_mass);
    r.t.push_back(st.time);
    r.rho_hat.push_back(std::move(mr.marginal));
    r.cg.push_back(project(st));
    double H = 0.0;
    for (std::size_t i = 0; i < st.values.size(); ++i)
      if (st.values[i] > 0.0) H += st.values[i] * std::log(st.values[i] / mu.values[i]);
    r.entropy.push_back(H);
    r.dissipation.push_back(op.dissipation(st.values, mu.values));
  };
  auto full = run_operator(op, rho0, s.t_end, fo);
  r.dt = full.dt;
  r.steps = full.steps;
  r.max_boundary_mass = full.max_boundary_mass;

  // effective dynamics from the same coarse initial law, in lockstep
  FpOptions eo;
  eo.dt = r.dt;
  eo.n_out = s.n_out;
  eo.leak_tol = 1e-6;
  eo.observer = [&](long, const GridDensity& st) { r.eta.push_back(st); };
  solve_coarse(Closure::from_field(r.eff, "effective"), false, s.beta, r.rho_hat.front(), s.t_end, eo);
  require(r.eta.size() == r.rho_hat.size(), ErrorKind::numerical, "effective and full solves took different step counts");

  // Gyongy replay: coarse solve driven by the extracted coefficients
  FpOptions co = eo;
  std::size_t step = 0;
  co.observer = [&](long, const GridDensity& st) {
    r.gyongy_l1 = std::max(r.gyongy_l1, l1_distance(st, r.rho_hat[step]));
    ++step;
  };
  solve_coarse(Closure::from_series(r.cg, "coarse-grained"), true, s.beta, r.rho_hat.front(), s.t_end, co);

  for (std::size_t i = 0; i < r.t.size(); ++i) {
    auto h = relative_entropy(r.rho_hat[i], r.eta[i]);
    require(!h.infinite, ErrorKind::numerical, "coarse-grained law escaped the support of the effective law");
    r.H_hat.push_back(h.value);
    r.W2sq.push_back(wasserstein2(r.rho_hat[i], r.eta[i]).squared());
    if (i > 0) r.max_entropy_increase = std::max(r.max_entropy_increase, r.entropy[i] - r.entropy[i - 1]);
  }
  std::vector<double> fisher(r.dissipation.size());
  for (std::size_t i = 0; i < fisher.size(); ++i) fisher[i] = s.beta * r.dissipation[i];
  r.ledger = entropy_ledger(r.t, r.entropy, fisher, s.beta);
  r.rate = rate_functional(r.rho_hat, r.cg, r.eff, s.beta);
  return r;
}

// ---------------------------------------------------------------- constants

inline std::vector<ConstantReport> overdamped_constants(const ScenarioSpec& s, const CoefficientField& eff,
                                                        const std::optional<Closure>& closed) {
  std::vector<ConstantReport> out;
  SampleSpec sp = s.sample;
  sp.box = s.fine;
  out.push_back(kappa_relent(s.pot, s.map, s.beta, eff, sp, s.analytic_constants));
  out.push_back(lambda_relent(s.map, eff, sp));
  auto w = kappa_lambda_wasser(s.pot, s.map, s.beta, eff, sp, s.analytic_constants);
  out.push_back(w.kappa);
  out.push_back(w.lambda);
  AlphaMode mode = AlphaMode::bakry_emery;
  if (s.alpha_mode) mode = *s.alpha_mode;
  else if (s.analytic_constants && detail::constant_fiber_hessian(s.pot, s.map)) mode = AlphaMode::gaussian_analytic;
  AlphaOptions ao;
  ao.seed = s.seed;
  auto a = alpha_constants(s.pot, s.map, s.beta, mode, ao);
  out.push_back(a.pi);
  out.push_back(a.ti);
  out.push_back(a.lsi);
  if (closed) {
    auto n = closure_norms(*closed, s.coarse);
    out.push_back(ctilde_overdamped(n.grad_b, n.div_A, s.beta, Provenance::analytic,
                                    "closed-form effective closure; sup of |grad b|, |div A| over the coarse grid"));
  } else {
    out.push_back(ctilde_overdamped(eff, s.beta));
  }
  return out;
}

inline std::vector<ConstantReport> langevin_constants(const ScenarioSpec& s, const ReferenceSuite& suite) {
  std::vector<ConstantReport> out;
  out.push_back(kappa_langevin(s.pot, s.map));
  auto ps = alpha_phase_space(s.pot, s.map, s.beta, s.alpha_mode.value_or(AlphaMode::gaussian_analytic));
  ConstantReport ati = s.alpha_ti_source == "phase" ? ps.full : ps.position_only;
  ati.name = "alpha_TI";
  ati.derivation += s.alpha_ti_source == "phase" ? " [phase-space fiber]" : " [positional fiber]";
  out.push_back(ati);
  out.push_back(ps.full);
  out.push_back(ps.position_only);
  out.push_back(ctilde_langevin(op_norm(suite.B), s.gamma, s.alpha_reg.value_or(0.0), Provenance::analytic,
                                "closed-form effective closure: |grad b| = |B|"));
  return out;
}

// ---------------------------------------------------------------- scenario

struct ScenarioResult {
  std::string name;
  double eps = 0.0;
  std::vector<BoundReport> reports;
  std::vector<ConstantReport> constants;
  json checks = json::object();  // named diagnostics with pass flags
  json summary = json::object();
  std::vector<std::string> files;

  bool pass() const {
    for (const auto& r : reports)
      if (!r.pass()) return false;
    for (const auto& [k, v] : checks.items())
      if (v.contains("pass") && !v["pass"].get<bool>()) return false;
    return true;
  }
  const BoundReport* report(const std::string& th) const {
    for (const auto& r : reports)
      if (r.theorem == th) return &r;
    return nullptr;
  }
};

/// Keeps regularly spaced indices plus the worst-margin index, so the verdict of the
/// thinned report equals the verdict over every step.
inline BoundReport thin_report(const BoundReport& r, std::size_t every) {
  if (every <= 1 || r.times.size() <= 2) return r;
  const auto m = r.margin();
  const std::size_t worst = std::size_t(std::min_element(m.begin(), m.end()) - m.begin());
  BoundReport o = r;
  o.times.clear(), o.lhs.clear(), o.rhs.clear();
  for (std::size_t i = 0; i < r.times.size(); ++i)
    if (i % every == 0 || i == worst || i + 1 == r.times.size()) {
      o.times.push_back(r.times[i]);
      o.lhs.push_back(r.lhs[i]);
      o.rhs.push_back(r.rhs[i]);
    }
  o.metadata["points_checked"] = r.times.size();
  o.metadata["sup_lhs"] = *std::max_element(r.lhs.begin(), r.lhs.end());
  o.metadata["rhs_final"] = r.rhs.back();
  return o;
}

inline json metadata_base(const ScenarioSpec& s) {
  return {{"scenario", s.name}, {"eps", s.eps}, {"beta", s.beta}, {"regime", s.regime == Regime::overdamped ? "overdamped" : "langevin"},
          {"config_hash", s.config.hash()}, {"seed", s.seed}};
}

inline ScenarioResult scenario_overdamped(const ScenarioSpec& s, OverdampedRun* keep = nullptr) {
  ScenarioResult res;
  res.name = s.name;
  res.eps = s.eps;
  OverdampedRun run = run_overdamped(s);
  res.constants = overdamped_constants(s, run.eff, run.eff_closure);
  const std::size_t every = std::size_t(std::max<long>(1, run.steps / s.n_out));

  std::vector<double> drop(run.t.size());
  for (std::size_t i = 0; i < drop.size(); ++i) drop[i] = run.entropy.front() - run.entropy[i];
  auto pick = [&](std::initializer_list<const char*> names) {
    std::vector<ConstantReport> out;
    for (const char* n : names)
      for (const auto& c : res.constants)
        if (c.name == n) out.push_back(c);
    return out;
  };
  json meta = metadata_base(s);
  meta["lhs_source"] = "push-forward of the 2D Fokker-Planck grid solve vs the 1D effective solve";
  meta["effective_coefficients"] = run.eff_source;
  meta["initial_law"] = s.initial_kind;
  meta["dt"] = run.dt;
  meta["steps"] = run.steps;

  for (const auto& name : s.theorems) {
    if (name == "entropy-rate") {
      EntropyRateOptions eo;
      eo.tolerance = s.rate_tolerance;
      auto plain = verify_entropy_rate_inequality(run.rho_hat, run.eta, run.rate, run.eff, s.beta, eo);
      plain.metadata.update(meta);
      res.reports.push_back(thin_report(plain, every));
      if (s.tau && *s.tau < 1.0) {
        eo.tau = s.tau;
        auto strong = verify_entropy_rate_inequality(run.rho_hat, run.eta, run.rate, run.eff, s.beta, eo);
        strong.metadata.update(meta);
        res.reports.push_back(thin_report(strong, every));
      }
      continue;
    }
    const Theorem th = parse_theorem(name);
    BoundInputs in;
    in.times = run.t;
    in.entropy_drop = drop;
    in.beta = s.beta;
    in.tolerance = s.tolerance;
    in.metadata = meta;
    in.metadata["entropy_drop_source"] = "H(rho_0|mu) - H(rho_t|mu) from the full grid solve";
    if (th == Theorem::relent_od) {
      in.lhs = run.H_hat;
      in.initial_gap = run.H_hat.front();
      in.constants = pick({"kappa_H", "lambda_H", "alpha_TI", "alpha_LSI"});
    } else {
      in.lhs = run.W2sq;
      in.initial_gap = run.W2sq.front();
      in.constants = pick({"kappa_W", "lambda_W", "alpha_TI", "alpha_LSI", "ctilde_W"});
      in.metadata["w2_estimator"] = "exact 1D quantile transport";
    }
    res.reports.push_back(thin_report(assemble_bound(th, in), every));
  }

  res.checks["gyongy_consistency"] = {{"l1_sup", run.gyongy_l1}, {"tolerance", 5e-3}, {"pass", run.gyongy_l1 <= 5e-3}};
  res.checks["entropy_monotone"] = {
      {"max_step_increase", run.max_entropy_increase}, {"tolerance", 1e-8}, {"pass", run.max_entropy_increase <= 1e-8}};
  res.checks["entropy_ledger"] = {{"max_rel_error", run.ledger.max_rel_error}, {"tolerance", 1e-2},
                                  {"pass", run.ledger.max_rel_error <= 1e-2}};
  {
    // I vanishes on the effective trajectory: feed eta with the effective coefficients
    std::vector<CoefficientField> effs(run.eta.size(), run.eff);
    const double I_eff = rate_functional(run.eta, effs, run.eff, s.beta).value;
    res.checks["effective_rate_functional"] = {{"value", I_eff}, {"tolerance", 1e-6}, {"pass", std::abs(I_eff) <= 1e-6}};
  }
  res.checks["gradient_flow_residual"] = {{"value", run.grad_flow_residual}, {"note", "diagnostic"}};

  res.summary = {{"sup_H", *std::max_element(run.H_hat.begin(), run.H_hat.end())},
                 {"sup_W2sq", *std::max_element(run.W2sq.begin(), run.W2sq.end())},
                 {"H_full_initial", run.entropy.front()},
                 {"rate_functional", run.rate.value},
                 {"dt", run.dt},
                 {"steps", run.steps},
                 {"max_boundary_mass", run.max_boundary_mass},
                 {"captured_mass", run.captured_mass},
                 {"ledger", {{"max_rel_error", run.ledger.max_rel_error},
                             {"drop_final", run.ledger.drop.back()},
                             {"dissipated_final", run.ledger.dissipated.back()}}}};
  if (keep) *keep = std::move(run);
  return res;
}

inline Mat sample_gaussian(const Vec& m, const Vec& var, long n, SeedLineage lin) {
  RandomStream rs(lin);
  Mat out(n, m.size());
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < m.size(); ++j) out(i, j) = m(j) + std::sqrt(var(j)) * rs.normal();
  return out;
}

struct LangevinArtifacts {
  ReferenceSuite suite;
  std::optional<TrajectorySummary> particles;
};

inline ScenarioResult scenario_langevin(const ScenarioSpec& s, LangevinArtifacts* keep = nullptr) {
  if (!s.pot.quadratic || !s.map.affine)
    throw ConfigError("physics.potential", "the Langevin pipeline uses the Gaussian reference: quadratic potential and affine map");
  ScenarioResult res;
  res.name = s.name;
  res.eps = s.eps;
  const long d = s.pot.dim;
  Vec m0(2 * d), v0(2 * d);
  m0 << s.q_mean, s.p_mean;
  v0 << s.q_var, s.p_var;
  std::vector<double> tg;
  for (int i = 0; i <= s.n_out; ++i) tg.push_back(s.t_end * double(i) / s.n_out);
  LangevinArtifacts art;
  art.suite = langevin_reference_suite(s.pot, s.map, s.beta, s.gamma, m0, Mat(v0.asDiagonal()), tg);
  res.constants = langevin_constants(s, art.suite);

  std::vector<double> H, W;
  for (const auto& p : art.suite.points) H.push_back(p.H), W.push_back(p.W2sq);
  json meta = metadata_base(s);
  meta["gamma"] = s.gamma;
  meta["lhs_source"] = "Gaussian moment propagation (exact coarse-grained marginal vs effective closure)";
  meta["alpha_TI_source"] = s.alpha_ti_source;
  for (const auto& name : s.theorems) {
    const Theorem th = parse_theorem(name);
    BoundInputs in;
    in.times = tg;
    in.lhs = th == Theorem::relent_lan ? H : W;
    in.initial_gap = in.lhs.front();
    in.initial_entropy = art.suite.H0_full;
    in.constants = res.constants;
    in.beta = s.beta;
    in.gamma = s.gamma;
    in.alpha = s.alpha_reg;
    in.tolerance = s.tolerance;
    in.metadata = meta;
    res.reports.push_back(assemble_bound(th, in));
  }

  if (s.n_traj > 0) {
    SdeConfig cfg;
    cfg.h = s.sde_h;
    cfg.t_end = s.t_end;
    cfg.beta = s.beta;
    cfg.gamma = s.gamma;
    cfg.lipschitz = op_norm(*s.pot.quadratic);
    RunOptions ro;
    ro.n_out = s.n_out;
    ro.jobs = s.jobs;
    ro.lineage = {s.seed, streams::langevin, 0};
    const Mat x0 = sample_gaussian(m0, v0, s.n_traj, {s.seed, streams::initial, 0});
    auto tr = simulate_langevin(s.pot, cfg, x0.leftCols(d), x0.rightCols(d), ro);
    // oracle moments at the particle output times, started from the drawn sample's own moments so
    // that only the integrator and its noise are compared
    const Vec m_emp = x0.colwise().mean().transpose();
    const Mat xc = x0.rowwise() - m_emp.transpose();
    const Mat S_emp = (xc.transpose() * xc) / double(x0.rows());
    auto laws = propagate_moments(langevin_system(*s.pot.quadratic, s.beta, s.gamma), m_emp, S_emp, tr.times);
    double mean_err = 0.0, var_err = 0.0;
    for (std::size_t j = 0; j < tr.times.size(); ++j)
      for (long a = 0; a < d; ++a) {
        const double om = laws[j].m(a), ov = laws[j].S(a, a);
        mean_err = std::max(mean_err, std::abs(tr.mean[j](a) - om) / std::max(std::abs(om), std::sqrt(ov)));
        var_err = std::max(var_err, std::abs(tr.var[j](a) - ov) / ov);
      }
    res.checks["particle_moments"] = {{"n_traj", s.n_traj}, {"h", s.sde_h}, {"max_mean_rel_error", mean_err},
                                      {"max_var_rel_error", var_err}, {"tolerance", s.moment_tol},
                                      {"aborted_fraction", tr.aborted_fraction()},
                                      {"pass", mean_err <= s.moment_tol && var_err <= s.moment_tol && tr.aborted == 0}};
    art.particles = std::move(tr);
  }
  res.summary = {{"sup_H", *std::max_element(H.begin(), H.end())},
                 {"sup_W2sq", *std::max_element(W.begin(), W.end())},
                 {"H_full_initial", art.suite.H0_full}};
  if (keep) *keep = std::move(art);
  return res;
}

// ---------------------------------------------------------------- artifacts

namespace detail {

inline std::string file_hash(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a(ss.str()));
}

inline json constants_json(const std::vector<ConstantReport>& cs) {
  json j = json::array();
  for (const auto& c : cs) j.push_back(c.to_json());
  return j;
}

}  // namespace detail

inline void write_reports(const std::filesystem::path& dir, ScenarioResult& res) {
  CsvWriter w(dir / "bounds.csv");
  w.header(bound_csv_header());
  for (const auto& r : res.reports) {
    const std::string f = "report_" + r.theorem + ".json";
    write_bound_json(dir / f, r);
    res.files.push_back(f);
    write_bound_rows(w, r, res.name, res.eps);
  }
  res.files.push_back("bounds.csv");
  write_json(dir / "constants.json", detail::constants_json(res.constants));
  res.files.push_back("constants.json");
  write_json(dir / "checks.json", res.checks);
  res.files.push_back("checks.json");
}

inline void write_manifest(const std::filesystem::path& dir, const ScenarioSpec& s, const ScenarioResult& res) {
  json files = json::array();
  for (const auto& f : res.files) files.push_back({{"file", f}, {"fnv1a", detail::file_hash(dir / f)}});
  json verdicts = json::object();
  for (const auto& r : res.reports) verdicts[r.theorem] = r.pass() ? "pass" : "fail";
  json m = {{"tool", "cgbound"},
            {"version", kVersion},
            {"scenario", s.name},
            {"eps", s.eps},
            {"config_hash", s.config.hash()},
            {"seed", s.seed},
            {"config", s.config.to_json()},
            {"overrides", s.config.overrides()},
            {"verdicts", verdicts},
            {"pass", res.pass()},
            {"summary", res.summary},
            {"outputs", files},
            {"traceability",
             {{"constants", "each constant lists provenance (analytic catalog derivation or seeded estimate)"},
              {"lhs", "grid solves or Gaussian moment propagation driven only by config fields"},
              {"seed_streams", "gibbs=1 conditional=2 overdamped=3 langevin=4 effective=5 coupled_pair=6 "
                               "constants=7 initial=8 sliced=9"}}}};
  write_json(dir / "manifest.json", m);
}

/// Runs one scenario and, when dir is set, writes reports, trajectories and a manifest there.
inline ScenarioResult run_scenario(const ScenarioSpec& s, const std::optional<std::filesystem::path>& dir = std::nullopt) {
  if (s.regime == Regime::langevin) {
    LangevinArtifacts art;
    ScenarioResult res = scenario_langevin(s, dir ? &art : nullptr);
    if (!dir) return res;
    std::filesystem::create_directories(*dir);
    write_reports(*dir, res);
    CsvWriter w(*dir / "trajectory.csv");
    w.header({"t", "H", "W2sq", "z_mean_cg", "z_var_cg", "z_mean_eff", "z_var_eff", "v_mean_cg", "v_var_cg",
              "v_mean_eff", "v_var_eff"});
    for (const auto& p : art.suite.points)
      w.row({p.t, p.H, p.W2sq, p.coarse.m(0), p.coarse.S(0, 0), p.effective.m(0), p.effective.S(0, 0), p.coarse.m(1),
             p.coarse.S(1, 1), p.effective.m(1), p.effective.S(1, 1)});
    res.files.push_back("trajectory.csv");
    if (art.particles) {
      write_trajectory_csv(*dir / "particles.csv", *art.particles);
      res.files.push_back("particles.csv");
    }
    write_manifest(*dir, s, res);
    return res;
  }
  OverdampedRun run;
  ScenarioResult res = scenario_overdamped(s, dir ? &run : nullptr);
  if (!dir) return res;
  std::filesystem::create_directories(*dir);
  write_reports(*dir, res);
  const std::size_t every = std::size_t(std::max<long>(1, run.steps / s.n_out));
  {
    CsvWriter w(*dir / "trajectory.csv");
    w.header({"t", "H_cg_eff", "W2sq_cg_eff", "H_full_mu", "dissipation", "rate_cumulative"});
    for (std::size_t i = 0; i < run.t.size(); i += every)
      w.row({run.t[i], run.H_hat[i], run.W2sq[i], run.entropy[i], run.dissipation[i], run.rate.cumulative[i]});
  }
  {
    CsvWriter w(*dir / "marginals.csv");
    w.header({"t", "z", "rho_cg", "eta"});
    for (std::size_t i = 0; i < run.t.size(); i += every)
      for (std::size_t c = 0; c < s.coarse.size(); ++c)
        w.row({run.t[i], s.coarse.center(c)(0), run.rho_hat[i].values[c], run.eta[i].values[c]});
  }
  write_coefficients_csv(*dir / "effective_coefficients.csv", run.eff);
  write_json(*dir / "ledger.json", run.ledger.to_json());
  for (const char* f : {"trajectory.csv", "marginals.csv", "effective_coefficients.csv", "ledger.json"}) res.files.push_back(f);
  write_manifest(*dir, s, res);
  return res;
}

// ---------------------------------------------------------------- epsilon sweep

struct SlopeFit {
  double slope = 0.0, intercept = 0.0, se = 0.0, ci_lo = 0.0, ci_hi = 0.0;
  json to_json() const { return {{"slope", slope}, {"stderr", se}, {"ci95", {ci_lo, ci_hi}}, {"intercept", intercept}}; }
};

/// Least-squares slope of log y against log x with a 95% Student-t interval.
inline SlopeFit loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::config, "slope fit needs at least two points");
  const std::size_t n = x.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    require(x[i] > 0.0 && y[i] > 0.0, ErrorKind::numerical, "log-log fit needs positive values");
    lx[i] = std::log(x[i]), ly[i] = std::log(y[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) mx += lx[i] / n, my += ly[i] / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) sxx += (lx[i] - mx) * (lx[i] - mx), sxy += (lx[i] - mx) * (ly[i] - my);
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (n > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = ly[i] - f.intercept - f.slope * lx[i];
      rss += e * e;
    }
    f.se = std::sqrt(rss / double(n - 2) / sxx);
    const double q = boost::math::quantile(boost::math::students_t(double(n - 2)), 0.975);
    f.ci_lo = f.slope - q * f.se, f.ci_hi = f.slope + q * f.se;
  } else {
    f.ci_lo = f.ci_hi = f.slope;
  }
  return f;
}

struct SweepRow {
  double eps = 0.0;
  double sup_H = 0.0, sup_W2sq = 0.0;
  double rhs_H = 0.0, rhs_W = 0.0;          // RHS at the final time (the sup over t)
  double prefactor_H = 0.0, prefactor_W = 0.0;
  bool pass = false;
  json constants = json::array();
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<ScenarioResult> scenarios;
  json fits = json::object();
  bool lhs_H_decreasing = false, lhs_W_decreasing = false;
  std::optional<std::string> error;  // first member failure; rows keep the finished members
  ErrorKind error_kind = ErrorKind::numerical;

  bool pass() const {
    if (error) return false;
    for (const auto& s : scenarios)
      if (!s.pass()) return false;
    return true;
  }
  json to_json() const {
    json rs = json::array();
    for (const auto& r : rows)
      rs.push_back({{"eps", r.eps}, {"sup_H", r.sup_H}, {"sup_W2sq", r.sup_W2sq}, {"rhs_H", r.rhs_H},
                    {"rhs_W", r.rhs_W}, {"prefactor_H", r.prefactor_H}, {"prefactor_W", r.prefactor_W},
                    {"verdict", r.pass ? "pass" : "fail"}, {"constants", r.constants}});
    json j = {{"rows", rs}, {"fits", fits}, {"lhs_H_strictly_decreasing", lhs_H_decreasing},
              {"lhs_W_strictly_decreasing", lhs_W_decreasing}, {"pass", pass()}};
    if (error) j["error"] = *error;
    return j;
  }
};

inline SweepRow sweep_row(const ScenarioResult& r) {
  SweepRow row;
  row.eps = r.eps;
  row.pass = r.pass();
  row.sup_H = r.summary.value("sup_H", 0.0);
  row.sup_W2sq = r.summary.value("sup_W2sq", 0.0);
  for (const auto& rep : r.reports) {
    const bool H = rep.theorem == "relent-od" || rep.theorem == "relent-lan";
    const bool W = rep.theorem == "wasser-od" || rep.theorem == "wasser-lan";
    if (!H && !W) continue;
    const double rhs = *std::max_element(rep.rhs.begin(), rep.rhs.end());
    const double pref = rep.metadata.value("prefactor", 0.0);
    if (H) row.rhs_H = rhs, row.prefactor_H = pref;
    else row.rhs_W = rhs, row.prefactor_W = pref;
  }
  row.constants = detail::constants_json(r.constants);
  return row;
}

/// Runs the scenario at each eps (strictly decreasing, at least three). Member failures stop the
/// sweep after the running jobs finish; finished rows are kept and written.
inline SweepResult sweep_epsilon(const Config& cfg, const std::vector<double>& eps_list,
                                 const std::optional<std::filesystem::path>& dir = std::nullopt, int jobs = 1) {
  if (eps_list.size() < 3) throw ConfigError("sweep.eps", "need at least three values");
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    if (!(eps_list[i] > 0.0)) throw ConfigError("sweep.eps", "values must be positive");
    if (i && !(eps_list[i] < eps_list[i - 1])) throw ConfigError("sweep.eps", "values must be strictly decreasing");
  }
  std::vector<ScenarioSpec> specs;
  for (double e : eps_list) {
    specs.push_back(parse_scenario(cfg, e));
    std::ostringstream nm;
    nm << specs.back().name << "_eps" << fmt_num(e);
    specs.back().name = nm.str();
  }
  SweepResult out;
  std::vector<std::optional<ScenarioResult>> done(specs.size());
  std::vector<std::string> errs(specs.size());
  std::vector<ErrorKind> kinds(specs.size(), ErrorKind::numerical);
  std::atomic<bool> stop{false};
  parallel_for(specs.size(), jobs, [&](std::size_t i) {
    if (stop) return;
    try {
      std::optional<std::filesystem::path> sub;
      if (dir) sub = *dir / ("eps_" + std::to_string(i));
      done[i] = run_scenario(specs[i], sub);
    } catch (const Error& e) {
      errs[i] = e.what();
      kinds[i] = e.kind();
      stop = true;
    } catch (const std::exception& e) {
      errs[i] = e.what();
      stop = true;
    }
  });
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!errs[i].empty() && !out.error) {
      out.error = "eps=" + fmt_num(eps_list[i]) + ": " + errs[i];
      out.error_kind = kinds[i];
    }
    if (!done[i]) continue;
    out.rows.push_back(sweep_row(*done[i]));
    out.scenarios.push_back(std::move(*done[i]));
  }
  if (!out.error) {
    std::vector<double> e, sH, sW, rH, rW, pH, pW;
    for (const auto& r : out.rows) {
      e.push_back(r.eps), sH.push_back(r.sup_H), sW.push_back(r.sup_W2sq);
      rH.push_back(r.rhs_H), rW.push_back(r.rhs_W), pH.push_back(r.prefactor_H), pW.push_back(r.prefactor_W);
    }
    auto fit = [&](const char* key, const std::vector<double>& y) {
      bool pos = std::all_of(y.begin(), y.end(), [](double v) { return v > 0.0; });
      out.fits[key] = pos ? loglog_slope(e, y).to_json() : json{{"slope", nullptr}, {"note", "nonpositive values"}};
    };
    fit("lhs_H", sH), fit("lhs_W2sq", sW), fit("rhs_H", rH), fit("rhs_W", rW);
    fit("prefactor_H", pH), fit("prefactor_W", pW);
    out.lhs_H_decreasing = out.lhs_W_decreasing = true;
    for (std::size_t i = 1; i < out.rows.size(); ++i) {
      out.lhs_H_decreasing &= sH[i] < sH[i - 1];
      out.lhs_W_decreasing &= sW[i] < sW[i - 1];
    }
  }
  if (dir) {
    std::filesystem::create_directories(*dir);
    CsvWriter w(*dir / "sweep.csv");
    w.header({"eps", "sup_H", "sup_W2sq", "rhs_H", "rhs_W", "prefactor_H", "prefactor_W", "verdict"});
    for (const auto& r : out.rows)
      w.row_text({fmt_num(r.eps), fmt_num(r.sup_H), fmt_num(r.sup_W2sq), fmt_num(r.rhs_H), fmt_num(r.rhs_W),
                  fmt_num(r.prefactor_H), fmt_num(r.prefactor_W), r.pass ? "pass" : "fail"});
    json j = out.to_json();
    j["config_hash"] = cfg.hash();
    write_json(*dir / "sweep.json", j);
  }
  return out;
}

// ---------------------------------------------------------------- particle runs

struct CoupledCheck {
  CoupledPairResult pair, identical;
  std::vector<double> w2sq;  // exact W2^2(rho_hat_t, eta_t) at the output times
  double worst_gap = 0.0;    // min over times of separation + 3 se - W2^2
  bool pass = false;
  json to_json() const {
    return {{"times", pair.times}, {"separation", pair.msd}, {"separation_se", pair.msd_se}, {"w2sq_exact", w2sq},
            {"identical_closure_separation", identical.msd}, {"worst_gap", worst_gap}, {"pass", pass}};
  }
};

/// Synchronous coupling of the exact coarse-grained closure (Gaussian, time dependent) with the
/// effective closure, against the exact W2 from moment propagation; plus the identical-closure control.
inline CoupledCheck coupled_pair_check(const ScenarioSpec& s) {
  if (!s.pot.quadratic || !s.map.affine)
    throw ConfigError("physics.potential", "the coupled-pair check needs a quadratic potential and an affine map");
  SdeConfig cfg;
  cfg.h = s.sde_h;
  cfg.t_end = s.t_end;
  cfg.beta = s.beta;
  const long steps = cfg.steps();
  std::vector<double> fine_t;
  for (long i = 0; i <= steps; ++i) fine_t.push_back(double(i) * cfg.h);
  const Mat S0 = s.q_var.asDiagonal();
  auto laws = propagate_moments(overdamped_system(*s.pot.quadratic, s.beta), s.q_mean, S0, fine_t);
  const Closure hat = gaussian_cg_closure(s.pot, s.map, laws);
  const Closure eff = *analytic_effective_closure(s.pot, s.map);
  const Mat q0 = sample_gaussian(s.q_mean, s.q_var, std::max<long>(s.n_traj, 2), {s.seed, streams::initial, 1});
  Mat z0(q0.rows(), 1);
  for (long i = 0; i < q0.rows(); ++i) z0(i, 0) = s.map.xi(q0.row(i).transpose())(0);
  CoupledPairOptions co;
  co.n_out = s.n_out;
  co.jobs = s.jobs;
  co.lineage = {s.seed, streams::coupled_pair, 0};
  CoupledCheck c;
  c.pair = simulate_coupled_pair(z0, z0, hat, eff, cfg, co);
  c.identical = simulate_coupled_pair(z0, z0, eff, eff, cfg, co);
  auto suite = overdamped_reference_suite(s.pot, s.map, s.beta, s.q_mean, S0, c.pair.times);
  c.worst_gap = INFINITY;
  bool zero = true;
  for (std::size_t j = 0; j < c.pair.times.size(); ++j) {
    c.w2sq.push_back(suite.points[j].W2sq);
    c.worst_gap = std::min(c.worst_gap, c.pair.msd[j] + 3.0 * c.pair.msd_se[j] - c.w2sq[j]);
    zero &= c.identical.msd[j] == 0.0;
  }
  c.pass = c.worst_gap >= -1e-12 && zero;
  return c;
}

/// Particle runs of the full and effective dynamics from the configured Gaussian start.
struct SimulationResult {
  TrajectorySummary full, effective;
  std::optional<CoupledCheck> coupled;
};

inline SimulationResult simulate_scenario(const ScenarioSpec& s) {
  SdeConfig cfg;
  cfg.h = s.sde_h;
  cfg.t_end = s.t_end;
  cfg.beta = s.beta;
  cfg.gamma = s.gamma;
  if (s.pot.quadratic) cfg.lipschitz = op_norm(*s.pot.quadratic);
  RunOptions ro;
  ro.n_out = s.n_out;
  ro.jobs = s.jobs;
  const long n = std::max<long>(s.n_traj, 2);
  std::optional<Closure> eff = analytic_effective_closure(s.pot, s.map);
  if (!eff) {
    if (s.regime == Regime::langevin || s.fine.dim() != 2)
      throw ConfigError("physics.potential", "no closed-form effective closure for this potential and map");
    eff = Closure::from_field(effective_coefficients_quadrature(GibbsMeasure(s.pot, s.beta), s.map, s.coarse, s.fine),
                              "quadrature");
  }
  SimulationResult r;
  const Mat q0 = sample_gaussian(s.q_mean, s.q_var, n, {s.seed, streams::initial, 0});
  Mat z0(n, 1);
  for (long i = 0; i < n; ++i) z0(i, 0) = s.map.xi(q0.row(i).transpose())(0);
  if (s.regime == Regime::overdamped) {
    ro.lineage = {s.seed, streams::overdamped, 0};
    r.full = simulate_overdamped(s.pot, cfg, q0, ro);
    ro.lineage = {s.seed, streams::effective, 0};
    r.effective = simulate_effective(*eff, cfg, z0, ro);
    if (s.pot.quadratic && s.map.affine) r.coupled = coupled_pair_check(s);
  } else {
    require(bool(s.map.affine), ErrorKind::degenerate_map, "Langevin runs need an affine map");
    const Mat p0 = sample_gaussian(s.p_mean, s.p_var, n, {s.seed, streams::initial, 2});
    ro.lineage = {s.seed, streams::langevin, 0};
    r.full = simulate_langevin(s.pot, cfg, q0, p0, ro);
    Mat v0(n, 1);
    for (long i = 0; i < n; ++i) v0(i, 0) = (s.map.affine->T * p0.row(i).transpose())(0);
    ro.lineage = {s.seed, streams::effective, 0};
    r.effective = simulate_effective_langevin(*eff, cfg, z0, v0, ro);
  }
  return r;
}

}  // namespace cgbound
